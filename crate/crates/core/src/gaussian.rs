//! Branching random walk on the tree and closed-form Brownian barrier laws.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::binomial_ci;
use crate::tree::TreeShape;

/// BRW values `h_v` with i.i.d. standard normal edge increments.
///
/// Both arrays are level-major. The increment stored at a vertex belongs to
/// the edge joining it to its parent; the root slot holds 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    shape: TreeShape,
    increments: Vec<f64>,
    values: Vec<f64>,
}

impl GaussianField {
    /// Builds a field from edge increments by top-down accumulation.
    pub fn from_increments(shape: TreeShape, mut increments: Vec<f64>) -> Result<Self> {
        if increments.len() != shape.num_vertices() {
            return Err(Error::Domain(format!(
                "expected {} increments, got {}",
                shape.num_vertices(),
                increments.len()
            )));
        }
        increments[0] = 0.0;
        let mut values = vec![0.0; increments.len()];
        accumulate(&shape, &increments, &mut values);
        Ok(GaussianField {
            shape,
            increments,
            values,
        })
    }

    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn level_values(&self, level: usize) -> &[f64] {
        &self.values[self.shape.level_range(level)]
    }

    pub fn leaf_values(&self) -> &[f64] {
        self.level_values(self.shape.depth())
    }
}

fn accumulate(shape: &TreeShape, increments: &[f64], values: &mut [f64]) {
    let b = shape.branching();
    values[0] = 0.0;
    for level in 1..=shape.depth() {
        let parents = shape.level_range(level - 1);
        let start = shape.level_offset(level);
        for (p, parent) in parents.enumerate() {
            let base = values[parent];
            for k in 0..b {
                let v = start + p * b + k;
                values[v] = base + increments[v];
            }
        }
    }
}

/// Samples a BRW on `T_{<=n}`.
pub fn sample_brw<R: Rng + ?Sized>(shape: TreeShape, rng: &mut R) -> GaussianField {
    let mut increments = vec![0.0; shape.num_vertices()];
    for inc in increments.iter_mut().skip(1) {
        *inc = StandardNormal.sample(rng);
    }
    let mut values = vec![0.0; increments.len()];
    accumulate(&shape, &increments, &mut values);
    GaussianField {
        shape,
        increments,
        values,
    }
}

/// Leaf values of a BRW without keeping the increments, reusing `scratch`
/// as the level-major value buffer.
pub fn sample_brw_values_into<R: Rng + ?Sized>(shape: &TreeShape, rng: &mut R, scratch: &mut Vec<f64>) {
    let b = shape.branching();
    scratch.clear();
    scratch.resize(shape.num_vertices(), 0.0);
    for level in 1..=shape.depth() {
        let parents = shape.level_range(level - 1);
        let start = shape.level_offset(level);
        for (p, parent) in parents.enumerate() {
            let base = scratch[parent];
            for k in 0..b {
                let z: f64 = StandardNormal.sample(rng);
                scratch[start + p * b + k] = base + z;
            }
        }
    }
}

/// `mu_{s,z}(x) = (e^{-x^2/s} - e^{-(2z-x)^2/s}) / sqrt(pi s)`, the density of
/// `B_s / sqrt 2` on the event that `B_r / sqrt 2` stays below `z` up to `s`.
pub fn bridge_below_density(s: f64, z: f64, x: f64) -> Result<f64> {
    if !(s > 0.0) || !(z > 0.0) {
        return Err(Error::Domain(format!("need s > 0 and z > 0, got s={s}, z={z}")));
    }
    if x > z {
        return Err(Error::Domain(format!("x = {x} lies above the barrier z = {z}")));
    }
    if x == z {
        return Ok(0.0);
    }
    let a = (-x * x / s).exp();
    let r = 2.0 * z - x;
    let c = (-r * r / s).exp();
    Ok(((a - c) / (std::f64::consts::PI * s).sqrt()).max(0.0))
}

/// Joint density of `(B_s, max_{r<=s} B_r)` at `(x, z)`; zero off the support
/// `{x <= z, z >= 0}`.
pub fn joint_max_density(s: f64, x: f64, z: f64) -> f64 {
    if !(s > 0.0) || x > z || z < 0.0 {
        return 0.0;
    }
    let r = 2.0 * z - x;
    2.0 * r / (2.0 * std::f64::consts::PI * s * s * s).sqrt() * (-r * r / (2.0 * s)).exp()
}

/// Estimate of `P(max_{|v| = l} h_v / sqrt 2 > sqrt(log b) l + z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub z: f64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    /// Replicates on which the event occurred.
    pub hits: u64,
    pub replicates: u64,
    pub importance_sampled: bool,
    /// Set when no replicate hit the event: only `hi` is meaningful.
    pub unresolved: bool,
}

impl TailEstimate {
    /// Half-width of the reported interval, as a standard error proxy.
    pub fn std_error(&self) -> f64 {
        (self.hi - self.lo) / (2.0 * 1.959_963_984_540_054)
    }
}

/// Tail of the BRW maximum at depth `level`.
///
/// Plain Monte Carlo reports a Wilson score interval. With `importance` set,
/// replicates are drawn from the spine mixture: a uniformly chosen leaf path
/// has its edge increments shifted by the drift `mu` that puts the spine at
/// the threshold on average, and each replicate carries the exact likelihood
/// ratio `b^l e^{l mu^2 / 2} / sum_v e^{mu h_v}`.
pub fn brw_max_tail<R: Rng + ?Sized>(
    branching: usize,
    level: usize,
    z: f64,
    replicates: u64,
    importance: bool,
    rng: &mut R,
) -> Result<TailEstimate> {
    if level < 1 {
        return Err(Error::Domain("tail level must be >= 1".into()));
    }
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("tail offset z = {z} must be >= 0")));
    }
    if replicates == 0 {
        return Err(Error::EmptySample("brw_max_tail replicates"));
    }
    let shape = TreeShape::new(branching, level)?;
    let sqrt_log_b = (branching as f64).ln().sqrt();
    // Threshold on the h scale.
    let threshold = std::f64::consts::SQRT_2 * (sqrt_log_b * level as f64 + z);
    let mut scratch = Vec::new();
    if !importance {
        let mut hits = 0u64;
        for _ in 0..replicates {
            sample_brw_values_into(&shape, rng, &mut scratch);
            let leaves = &scratch[shape.level_range(level)];
            if leaves.iter().any(|&h| h > threshold) {
                hits += 1;
            }
        }
        let (lo, hi) = binomial_ci(hits, replicates, 0.95)?;
        return Ok(TailEstimate {
            z,
            estimate: hits as f64 / replicates as f64,
            lo,
            hi,
            hits,
            replicates,
            importance_sampled: false,
            unresolved: hits == 0,
        });
    }

    let drift = threshold / level as f64;
    let ln_norm = level as f64 * (branching as f64).ln() + 0.5 * level as f64 * drift * drift;
    let leaves = shape.num_leaves();
    let mut increments = vec![0.0; shape.num_vertices()];
    let mut hits = 0u64;
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..replicates {
        let spine = rng.random_range(0..leaves);
        for inc in increments.iter_mut().skip(1) {
            *inc = StandardNormal.sample(rng);
        }
        for lv in 1..=level {
            let ancestor = spine / branching.pow((level - lv) as u32);
            increments[shape.level_offset(lv) + ancestor] += drift;
        }
        scratch.resize(increments.len(), 0.0);
        accumulate(&shape, &increments, &mut scratch);
        let leaf_vals = &scratch[shape.level_range(level)];
        let max = leaf_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max > threshold {
            hits += 1;
            let m = drift * max;
            let lse = m + leaf_vals.iter().map(|&h| (drift * h - m).exp()).sum::<f64>().ln();
            let w = (ln_norm - lse).exp();
            sum += w;
            sum_sq += w * w;
        }
    }
    let n = replicates as f64;
    let mean = sum / n;
    let var = if replicates > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let half = 1.959_963_984_540_054 * (var / n).sqrt();
    Ok(TailEstimate {
        z,
        estimate: mean,
        lo: (mean - half).max(0.0),
        hi: if hits == 0 { f64::NAN } else { mean + half },
        hits,
        replicates,
        importance_sampled: true,
        unresolved: hits == 0,
    })
}
