//! Derivative martingale, additive martingale and the critical cascade
//! measure built from a branching random walk.
//!
//! With `x_v = sqrt(log b) |v| - h_v / sqrt 2`, every quantity here is a sum
//! over one level of terms in `x_v` and `exp(-2 sqrt(log b) x_v)`. The terms
//! span many orders of magnitude, so sums are compensated.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{sample_brw, GaussianField};
use crate::rng::replicate_rng;
use crate::stats::{median, CompensatedSum};
use crate::tree::TreeShape;

fn sqrt_log_b(b: usize) -> f64 {
    (b as f64).ln().sqrt()
}

/// Per-vertex derivative-martingale weights `x_v e^{-2 sqrt(log b) x_v}` at `level`.
pub fn derivative_weights(field: &GaussianField, level: usize) -> Vec<f64> {
    let s = sqrt_log_b(field.shape().branching());
    let base = s * level as f64;
    field
        .level_values(level)
        .iter()
        .map(|&h| {
            let x = base - h / std::f64::consts::SQRT_2;
            x * (-2.0 * s * x).exp()
        })
        .collect()
}

fn level_sum(field: &GaussianField, level: usize, term: impl Fn(f64, f64) -> f64) -> f64 {
    let s = sqrt_log_b(field.shape().branching());
    let base = s * level as f64;
    field
        .level_values(level)
        .iter()
        .map(|&h| term(base - h / std::f64::consts::SQRT_2, s))
        .collect::<CompensatedSum>()
        .value()
}

/// `D_l` evaluated on level `l` of the field.
pub fn derivative_martingale_at(field: &GaussianField, level: usize) -> f64 {
    level_sum(field, level, |x, s| x * (-2.0 * s * x).exp())
}

/// `D_n` at the field's depth.
pub fn derivative_martingale(field: &GaussianField) -> f64 {
    derivative_martingale_at(field, field.shape().depth())
}

/// `W_n = sum_v e^{-2 sqrt(log b) x_v}` at the field's depth.
pub fn additive_martingale(field: &GaussianField) -> f64 {
    level_sum(field, field.shape().depth(), |x, s| (-2.0 * s * x).exp())
}

/// `D_n^(2) = sum_v x_v^2 e^{-4 sqrt(log b) x_v}` at the field's depth.
pub fn squared_term(field: &GaussianField) -> f64 {
    level_sum(field, field.shape().depth(), |x, s| x * x * (-4.0 * s * x).exp())
}

/// `Z_n(I_u)` for every depth-`m` b-adic interval, in order of location.
///
/// The density of `Z_n` on a leaf interval is `b^n` times the leaf weight,
/// and each leaf interval has length `b^-n`, so an interval's mass is the
/// sum of the weights of the leaves below it.
pub fn cascade_measure_masses(field: &GaussianField, m: usize) -> Result<Vec<f64>> {
    let shape = field.shape();
    let n = shape.depth();
    if m > n {
        return Err(Error::Domain(format!("interval depth {m} exceeds field depth {n}")));
    }
    let weights = derivative_weights(field, n);
    let block = shape.branching().pow((n - m) as u32);
    Ok(weights
        .chunks(block)
        .map(|c| c.iter().copied().collect::<CompensatedSum>().value())
        .collect())
}

/// Merges depth-`m` masses into depth-`m - 1` masses.
pub fn merge_masses(masses: &[f64], branching: usize) -> Vec<f64> {
    masses
        .chunks(branching)
        .map(|c| c.iter().copied().collect::<CompensatedSum>().value())
        .collect()
}

/// Z-mass of the union of depth-`m` intervals `[lo_index, hi_index)`.
pub fn mass_of_range(masses: &[f64], lo_index: usize, hi_index: usize) -> f64 {
    masses[lo_index..hi_index].iter().copied().collect::<CompensatedSum>().value()
}

/// Martingale summaries of one BRW replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeSummary {
    pub n: usize,
    pub d: f64,
    pub w: f64,
    pub d2: f64,
    /// Depth of the intervals in `interval_masses`.
    pub mass_depth: usize,
    pub interval_masses: Vec<f64>,
}

impl CascadeSummary {
    pub fn total_mass(&self) -> f64 {
        self.interval_masses.iter().copied().collect::<CompensatedSum>().value()
    }
}

pub fn summarize(field: &GaussianField, mass_depth: usize) -> Result<CascadeSummary> {
    Ok(CascadeSummary {
        n: field.shape().depth(),
        d: derivative_martingale(field),
        w: additive_martingale(field),
        d2: squared_term(field),
        mass_depth,
        interval_masses: cascade_measure_masses(field, mass_depth)?,
    })
}

/// Draws standing in for `D_infinity`, with a convergence diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DInftyEstimate {
    pub branching: usize,
    pub n: usize,
    /// `D_n` per replicate.
    pub draws: Vec<f64>,
    /// Z-masses of the depth-`mass_depth` intervals per replicate.
    pub masses: Vec<Vec<f64>>,
    pub mass_depth: usize,
    /// `median |D_n - D_{n-2}| / median D_n`.
    pub stabilization: f64,
    pub positive_fraction: f64,
}

/// One replicate of [`estimate_d_infty`]: `D_n`, `|D_n - D_{n-2}|` (when
/// `n >= 2`) and the interval masses at `mass_depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct DInftyReplicate {
    pub d: f64,
    pub gap: Option<f64>,
    pub masses: Vec<f64>,
}

pub fn d_infty_replicate(shape: TreeShape, mass_depth: usize, master_seed: u64, index: u64) -> Result<DInftyReplicate> {
    let n = shape.depth();
    let mut rng = replicate_rng(master_seed, index);
    let field = sample_brw(shape, &mut rng);
    let d = derivative_martingale(&field);
    Ok(DInftyReplicate {
        d,
        gap: (n >= 2).then(|| (d - derivative_martingale_at(&field, n - 2)).abs()),
        masses: cascade_measure_masses(&field, mass_depth)?,
    })
}

impl DInftyEstimate {
    /// Collects replicates, taken in index order.
    pub fn from_replicates(branching: usize, n: usize, mass_depth: usize, reps: Vec<DInftyReplicate>) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::EmptySample("estimate_d_infty replicates"));
        }
        let total = reps.len();
        let mut draws = Vec::with_capacity(total);
        let mut masses = Vec::with_capacity(total);
        let mut gaps = Vec::with_capacity(total);
        for r in reps {
            draws.push(r.d);
            gaps.extend(r.gap);
            masses.push(r.masses);
        }
        let med = median(&draws)?;
        let stabilization = if gaps.is_empty() { f64::NAN } else { median(&gaps)? / med };
        let positive_fraction = draws.iter().filter(|&&d| d > 0.0).count() as f64 / total as f64;
        Ok(DInftyEstimate {
            branching,
            n,
            draws,
            masses,
            mass_depth,
            stabilization,
            positive_fraction,
        })
    }
}

/// Samples `replicates` BRWs of depth `n` and records `D_n` (and interval
/// masses at `mass_depth`) per replicate. Replicate `i` uses the stream
/// `replicate_rng(master_seed, i)`.
pub fn estimate_d_infty(
    branching: usize,
    n: usize,
    mass_depth: usize,
    replicates: usize,
    master_seed: u64,
) -> Result<DInftyEstimate> {
    if mass_depth > n {
        return Err(Error::Domain("mass depth exceeds n".into()));
    }
    let shape = TreeShape::new(branching, n)?;
    let reps = (0..replicates as u64)
        .map(|i| d_infty_replicate(shape, mass_depth, master_seed, i))
        .collect::<Result<Vec<_>>>()?;
    DInftyEstimate::from_replicates(branching, n, mass_depth, reps)
}

/// Single-stream convenience: `D_n` of a fresh BRW.
pub fn sample_derivative_martingale<R: Rng + ?Sized>(shape: TreeShape, rng: &mut R) -> f64 {
    derivative_martingale(&sample_brw(shape, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn depth_zero_values() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let f = sample_brw(TreeShape::new(2, 0).unwrap(), &mut rng);
        assert_eq!(derivative_martingale(&f), 0.0);
        assert_eq!(additive_martingale(&f), 1.0);
        assert_eq!(squared_term(&f), 0.0);
    }

    #[test]
    fn total_mass_equals_derivative_martingale() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        for n in [3usize, 7, 12] {
            let f = sample_brw(TreeShape::new(2, n).unwrap(), &mut rng);
            let d = derivative_martingale(&f);
            for m in 0..=n {
                let masses = cascade_measure_masses(&f, m).unwrap();
                assert_eq!(masses.len(), 1 << m);
                let total: f64 = masses.iter().copied().collect::<CompensatedSum>().value();
                assert!(((total - d) / d.abs()).abs() < 1e-12, "n={n} m={m}");
            }
            let leaves = cascade_measure_masses(&f, n).unwrap();
            assert_eq!(leaves, derivative_weights(&f, n));
        }
    }

    #[test]
    fn merging_siblings_gives_coarser_masses() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let f = sample_brw(TreeShape::new(3, 6).unwrap(), &mut rng);
        for m in 1..=6 {
            let fine = cascade_measure_masses(&f, m).unwrap();
            let coarse = cascade_measure_masses(&f, m - 1).unwrap();
            for (a, b) in merge_masses(&fine, 3).iter().zip(&coarse) {
                assert!((a - b).abs() <= 1e-13 * b.abs().max(1e-300));
            }
        }
        assert!(cascade_measure_masses(&f, 7).is_err());
    }

    #[test]
    fn nonnegative_summaries() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        for _ in 0..50 {
            let f = sample_brw(TreeShape::new(2, 9).unwrap(), &mut rng);
            let s = summarize(&f, 3).unwrap();
            assert!(s.w >= 0.0 && s.d2 >= 0.0);
            assert!(((s.total_mass() - s.d) / s.d.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn d_infty_draws_are_finite() {
        let est = estimate_d_infty(2, 10, 1, 40, 7).unwrap();
        assert_eq!(est.draws.len(), 40);
        assert!(est.draws.iter().all(|d| d.is_finite()));
        assert!(est.stabilization.is_finite());
        assert_eq!(est.masses[0].len(), 2);
    }
}
