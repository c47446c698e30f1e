//! Scalar variate generators with per-call parameters.
//!
//! The field sampler draws one Poisson and one Gamma variate per edge with a
//! parameter that changes on every call, so the table-building constructors
//! of general-purpose distribution types are the wrong trade-off here.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Uniform on the open interval (0, 1) with 53 bits of resolution.
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

const LN_FACTORIAL_SMALL: [f64; 10] = [
    0.0,
    0.0,
    std::f64::consts::LN_2,
    1.791_759_469_228_055,
    3.178_053_830_347_945_8,
    4.787_491_742_782_046,
    6.579_251_212_010_101,
    8.525_161_361_065_415,
    10.604_602_902_745_25,
    12.801_827_480_081_469,
];

/// `ln k!` for integral `k >= 0` (table below 10, Stirling series above).
pub fn ln_factorial(k: f64) -> f64 {
    if k < 10.0 {
        return LN_FACTORIAL_SMALL[k as usize];
    }
    let r = 1.0 / k;
    let r2 = r * r;
    (k + 0.5) * k.ln() - k
        + 0.918_938_533_204_672_8
        + r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 / 1680.0)))
}

/// Poisson variate with mean `lambda >= 0`.
///
/// Multiplicative inversion below 10, Hörmann's transformed rejection with
/// squeeze (PTRS) above.
pub fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < 10.0 {
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut p = open01(rng);
        while p > limit {
            k += 1;
            p *= open01(rng);
        }
        return k;
    }
    let slam = lambda.sqrt();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = open01(rng) - 0.5;
        let v = open01(rng);
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        if lhs <= -lambda + k * lambda.ln() - ln_factorial(k) {
            return k as u64;
        }
    }
}

/// Gamma variate with shape `shape >= 1` and unit scale (Marsaglia–Tsang).
pub fn gamma_unit<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape >= 1.0);
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open01(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn ln_fact_exact(k: u64) -> f64 {
        (1..=k).map(|i| (i as f64).ln()).sum()
    }

    #[test]
    fn ln_factorial_matches_direct_sum() {
        for k in 0..200u64 {
            let want = ln_fact_exact(k);
            assert!((ln_factorial(k as f64) - want).abs() < 1e-10 * want.max(1.0), "k={k}");
        }
    }

    fn poisson_pmf(k: u64, lambda: f64) -> f64 {
        (-lambda + k as f64 * lambda.ln() - ln_fact_exact(k)).exp()
    }

    /// Chi-square goodness of fit of `poisson(lambda)` against its pmf.
    fn poisson_chi2(lambda: f64, draws: usize, seed: u64) -> (f64, usize) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let hi = (lambda + 8.0 * lambda.sqrt() + 10.0) as usize;
        let mut counts = vec![0usize; hi + 1];
        for _ in 0..draws {
            let k = poisson(lambda, &mut rng) as usize;
            counts[k.min(hi)] += 1;
        }
        let mut stat = 0.0;
        let mut cells = 0;
        let (mut obs, mut exp) = (0.0, 0.0);
        for (k, &c) in counts.iter().enumerate() {
            obs += c as f64;
            exp += if k == hi {
                draws as f64 - (0..hi).map(|j| poisson_pmf(j as u64, lambda)).sum::<f64>() * draws as f64
            } else {
                poisson_pmf(k as u64, lambda) * draws as f64
            };
            if exp >= 20.0 {
                stat += (obs - exp) * (obs - exp) / exp;
                cells += 1;
                obs = 0.0;
                exp = 0.0;
            }
        }
        (stat, cells)
    }

    #[test]
    fn poisson_goodness_of_fit() {
        for (i, &lambda) in [0.3, 2.0, 9.5, 10.0, 37.0, 240.0].iter().enumerate() {
            let (stat, cells) = poisson_chi2(lambda, 200_000, 11 + i as u64);
            let dof = cells as f64 - 1.0;
            // Chi-square with dof degrees of freedom: mean dof, sd sqrt(2 dof).
            assert!(stat < dof + 5.0 * (2.0 * dof).sqrt(), "lambda={lambda} stat={stat} dof={dof}");
        }
    }

    #[test]
    fn gamma_moments() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        for &shape in &[1.0, 2.0, 7.0, 300.0] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| gamma_unit(shape, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (shape / n as f64).sqrt();
            assert!((mean - shape).abs() < 5.0 * se, "shape={shape} mean={mean}");
            assert!((var / shape - 1.0).abs() < 0.03, "shape={shape} var={var}");
        }
    }

    #[test]
    fn open01_is_open() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        for _ in 0..10_000 {
            let u = open01(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
