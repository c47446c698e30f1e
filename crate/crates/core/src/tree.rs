//! Implicit rooted b-ary tree of finite depth.
//!
//! Vertices are never materialized. A vertex at depth `l` is identified by
//! its digit address, or equivalently by its position in `[0, b^l)` within
//! its level. Per-vertex data lives in flat level-major arrays: the root
//! first, then the `b` vertices of level 1, and so on.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Shape of the tree `T_{<=n}`: branching number `b >= 2` and depth `n >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeShape {
    branching: usize,
    depth: usize,
}

impl TreeShape {
    pub fn new(branching: usize, depth: usize) -> Result<Self> {
        if branching < 2 {
            return Err(Error::InvalidShape(format!(
                "branching number must be at least 2, got {branching}"
            )));
        }
        // Keep b^(n+1) addressable so level offsets never overflow.
        let mut total: u128 = 1;
        for _ in 0..=depth {
            total = total.saturating_mul(branching as u128);
        }
        if total > (1u128 << 40) {
            return Err(Error::InvalidShape(format!(
                "tree with b={branching}, n={depth} is too large to materialize"
            )));
        }
        Ok(TreeShape { branching, depth })
    }

    #[inline]
    pub fn branching(&self) -> usize {
        self.branching
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of vertices at depth `level`, i.e. `b^level`.
    #[inline]
    pub fn level_len(&self, level: usize) -> usize {
        self.branching.pow(level as u32)
    }

    /// Position of the first vertex of `level` in a level-major array.
    #[inline]
    pub fn level_offset(&self, level: usize) -> usize {
        (self.level_len(level) - 1) / (self.branching - 1)
    }

    /// Total number of vertices in `T_{<=n}`.
    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.level_offset(self.depth + 1)
    }

    #[inline]
    pub fn num_leaves(&self) -> usize {
        self.level_len(self.depth)
    }

    /// Range of level-major positions occupied by `level`.
    #[inline]
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        let start = self.level_offset(level);
        start..start + self.level_len(level)
    }

    /// Graph degree of a vertex at `level` in `T_{<=n}`: the root has `b`
    /// neighbours, internal vertices `b + 1`, leaves 1. A depth-0 tree is a
    /// single isolated vertex and reports degree 0.
    pub fn degree(&self, level: usize) -> usize {
        if self.depth == 0 {
            0
        } else if level == 0 {
            self.branching
        } else if level == self.depth {
            1
        } else {
            self.branching + 1
        }
    }

    /// Level-major position of `address`.
    pub fn flat_index(&self, address: &TreeAddress) -> Result<usize> {
        if address.depth() > self.depth {
            return Err(Error::InvalidAddress(format!(
                "address of depth {} exceeds tree depth {}",
                address.depth(),
                self.depth
            )));
        }
        Ok(self.level_offset(address.depth()) + index_of(address, self.branching)?)
    }

    /// Address of the vertex at position `index` within `level`.
    pub fn address_at(&self, level: usize, index: usize) -> Result<TreeAddress> {
        if level > self.depth || index >= self.level_len(level) {
            return Err(Error::InvalidAddress(format!(
                "no vertex {index} at level {level} of a depth-{} tree",
                self.depth
            )));
        }
        let mut digits = vec![0u32; level];
        let mut rest = index;
        for slot in digits.iter_mut().rev() {
            *slot = (rest % self.branching) as u32;
            rest /= self.branching;
        }
        Ok(TreeAddress { digits })
    }
}

/// Digit label `(v_1, ..., v_|v|)` of a vertex; the root is the empty address.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TreeAddress {
    digits: Vec<u32>,
}

impl TreeAddress {
    pub fn root() -> Self {
        TreeAddress { digits: Vec::new() }
    }

    /// Builds an address, checking every digit against the branching number.
    pub fn new(digits: Vec<u32>, branching: usize) -> Result<Self> {
        if let Some(&d) = digits.iter().find(|&&d| d as usize >= branching) {
            return Err(Error::InvalidAddress(format!(
                "digit {d} out of range for branching number {branching}"
            )));
        }
        Ok(TreeAddress { digits })
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn depth(&self) -> usize {
        self.digits.len()
    }

    /// Ancestor at depth `k`: the `k`-digit prefix.
    pub fn ancestor(&self, k: usize) -> TreeAddress {
        TreeAddress {
            digits: self.digits[..k.min(self.digits.len())].to_vec(),
        }
    }

    pub fn child(&self, digit: u32) -> TreeAddress {
        let mut digits = self.digits.clone();
        digits.push(digit);
        TreeAddress { digits }
    }
}

impl fmt::Display for TreeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.digits {
            if *d < 10 {
                write!(f, "{d}")?;
            } else {
                // Digits beyond 9 continue with lowercase letters.
                write!(f, "{}", char::from_digit(*d, 36).unwrap_or('?'))?;
            }
        }
        Ok(())
    }
}

impl FromStr for TreeAddress {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .chars()
            .map(|c| {
                c.to_digit(36)
                    .ok_or_else(|| Error::InvalidAddress(format!("bad digit '{c}' in \"{s}\"")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TreeAddress { digits })
    }
}

/// Position of `address` within its level: `sum_i digits[i] * b^(l-1-i)`.
pub fn index_of(address: &TreeAddress, branching: usize) -> Result<usize> {
    let mut index = 0usize;
    for &d in address.digits() {
        if d as usize >= branching {
            return Err(Error::InvalidAddress(format!(
                "digit {d} out of range for branching number {branching}"
            )));
        }
        index = index * branching + d as usize;
    }
    Ok(index)
}

/// Depth of the most recent common ancestor `|u ^ v|`.
pub fn common_ancestor_depth(u: &TreeAddress, v: &TreeAddress) -> usize {
    u.digits()
        .iter()
        .zip(v.digits())
        .take_while(|(a, b)| a == b)
        .count()
}

/// Common ancestor depth of two vertices given by their positions within the
/// same level `level`.
pub fn common_ancestor_depth_of_indices(
    mut i: usize,
    mut j: usize,
    level: usize,
    branching: usize,
) -> usize {
    let mut depth = level;
    while i != j {
        i /= branching;
        j /= branching;
        depth -= 1;
    }
    depth
}

/// `sigma(v) = sum_i v_i / b^i`.
pub fn location(address: &TreeAddress, branching: usize) -> f64 {
    let index = address.digits().iter().fold(0usize, |acc, &d| acc * branching + d as usize);
    location_of_index(index, address.depth(), branching)
}

/// Location of the vertex at position `index` of `level`, i.e. `index / b^level`.
#[inline]
pub fn location_of_index(index: usize, level: usize, branching: usize) -> f64 {
    index as f64 / (branching as f64).powi(level as i32)
}

/// Leaf `v(x)` whose interval `[sigma(v), sigma(v) + b^-n]` contains `x`.
/// On a boundary shared by two leaves the one with the larger location wins.
pub fn leaf_of_point(x: f64, shape: &TreeShape) -> Result<TreeAddress> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("point {x} outside [0, 1]")));
    }
    let leaves = shape.num_leaves();
    let scaled = x * leaves as f64;
    // Rounding in the product is corrected against the exact leaf edges;
    // x = 1 belongs only to the last leaf.
    let mut index = (scaled.floor() as usize).min(leaves - 1);
    let (n, b) = (shape.depth(), shape.branching());
    if index > 0 && location_of_index(index, n, b) > x {
        index -= 1;
    } else if index + 1 < leaves && location_of_index(index + 1, n, b) <= x {
        index += 1;
    }
    shape.address_at(shape.depth(), index)
}
