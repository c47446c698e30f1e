//! Direct simulation of the continuous-time simple random walk on `T_{<=n}`
//! stopped at the inverse local time of the root.
//!
//! Continuous time is never simulated. Each visit to a vertex `v` holds for
//! an `Exp(1)` time and adds `Exp(1) / deg(v)` to its local time; the next
//! vertex is a uniform neighbour. The root accrues `Exp(1) / b` per holding,
//! and the walk is stopped inside the holding during which the root's local
//! time crosses `t`, so the root value is exactly `t`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::tree::{TreeAddress, TreeShape};

/// One replicate of the stopped local-time field, level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    shape: TreeShape,
    t: f64,
    values: Vec<f64>,
}

impl LocalTimeField {
    pub fn new(shape: TreeShape, t: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_vertices() {
            return Err(Error::Domain(format!(
                "expected {} values, got {}",
                shape.num_vertices(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("local times must be >= 0".into()));
        }
        Ok(LocalTimeField { shape, t, values })
    }

    pub(crate) fn from_parts(shape: TreeShape, t: f64, values: Vec<f64>) -> Self {
        LocalTimeField { shape, t, values }
    }

    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    /// Stopping level of the root local time.
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn level_values(&self, level: usize) -> &[f64] {
        &self.values[self.shape.level_range(level)]
    }

    pub fn leaf_values(&self) -> &[f64] {
        self.level_values(self.shape.depth())
    }

    pub fn value(&self, address: &TreeAddress) -> Result<f64> {
        Ok(self.values[self.shape.flat_index(address)?])
    }

    /// True when every vertex below a zero-valued vertex is zero as well.
    pub fn zero_subtrees_consistent(&self) -> bool {
        let b = self.shape.branching();
        (1..=self.shape.depth()).all(|level| {
            let start = self.shape.level_offset(level);
            let parent_start = self.shape.level_offset(level - 1);
            (0..self.shape.level_len(level)).all(|i| {
                self.values[parent_start + i / b] > 0.0 || self.values[start + i] == 0.0
            })
        })
    }
}

/// Parameters of a direct walk replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    pub shape: TreeShape,
    pub t: f64,
    pub seed: u64,
    /// Maximum number of vertex visits per replicate.
    pub excursion_cap: u64,
}

pub const DEFAULT_EXCURSION_CAP: u64 = 1_000_000_000;

impl WalkConfig {
    pub fn new(shape: TreeShape, t: f64, seed: u64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("stopping level t = {t} must be > 0")));
        }
        Ok(WalkConfig {
            shape,
            t,
            seed,
            excursion_cap: DEFAULT_EXCURSION_CAP,
        })
    }

    pub fn with_excursion_cap(mut self, cap: u64) -> Self {
        self.excursion_cap = cap;
        self
    }
}

/// One excursion away from the root, adding local time to `acc`.
///
/// Returns the number of non-root vertex visits. `budget` bounds that count;
/// exceeding it aborts the excursion.
pub fn excursion_from_root<R: Rng + ?Sized>(
    shape: &TreeShape,
    rng: &mut R,
    acc: &mut [f64],
    budget: u64,
) -> Result<u64> {
    let n = shape.depth();
    if n == 0 {
        return Ok(0);
    }
    let b = shape.branching();
    let inv_internal = 1.0 / (b + 1) as f64;
    let mut level = 1usize;
    let mut index = rng.random_range(0..b);
    let mut visits = 0u64;
    loop {
        visits += 1;
        if visits > budget {
            return Err(Error::ExcursionCapExceeded { cap: budget });
        }
        let hold: f64 = Exp1.sample(rng);
        let slot = shape.level_offset(level) + index;
        if level == n {
            acc[slot] += hold;
            level -= 1;
            index /= b;
        } else {
            acc[slot] += hold * inv_internal;
            let r = rng.random_range(0..=b);
            if r < b {
                level += 1;
                index = index * b + r;
            } else {
                level -= 1;
                index /= b;
            }
        }
        if level == 0 {
            return Ok(visits);
        }
    }
}

/// Samples `(L_{tau(t)}(v))_v` by direct simulation.
pub fn run_inverse_local_time<R: Rng + ?Sized>(cfg: &WalkConfig, rng: &mut R) -> Result<LocalTimeField> {
    if !(cfg.t > 0.0) {
        return Err(Error::Domain(format!("stopping level t = {} must be > 0", cfg.t)));
    }
    let shape = cfg.shape;
    let mut values = vec![0.0; shape.num_vertices()];
    if shape.depth() > 0 {
        let inv_b = 1.0 / shape.branching() as f64;
        let mut root = 0.0;
        let mut budget = cfg.excursion_cap;
        loop {
            let hold: f64 = Exp1.sample(rng);
            root += hold * inv_b;
            if root > cfg.t {
                break;
            }
            budget -= excursion_from_root(&shape, rng, &mut values, budget)?;
        }
    }
    values[0] = cfg.t;
    Ok(LocalTimeField::from_parts(shape, cfg.t, values))
}
