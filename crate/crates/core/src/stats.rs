//! Statistics utilities shared by the experiments and the test suites.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySample("mean"));
    }
    Ok(xs.iter().copied().collect::<CompensatedSum>().value() / xs.len() as f64)
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> Result<(f64, f64)> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Ok((m, 0.0));
    }
    let ss: CompensatedSum = xs.iter().map(|x| (x - m) * (x - m)).collect();
    Ok((m, ss.value() / (xs.len() - 1) as f64))
}

pub fn median(xs: &[f64]) -> Result<f64> {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(xs: &[f64], q: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySample("quantile"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Wilson score interval for a binomial proportion at confidence `level`.
pub fn binomial_ci(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::EmptySample("binomial_ci trials"));
    }
    if successes > trials {
        return Err(Error::Domain(format!("{successes} successes out of {trials} trials")));
    }
    let z = normal_quantile(0.5 + 0.5 * level);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    Ok((lo, hi))
}

/// Empirical distribution function of a sample.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample("ecdf"));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Ecdf { sorted })
    }

    /// `F(x) = #{x_i <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Left limit `F(x-) = #{x_i < x} / n`.
    pub fn eval_left(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v < x) as f64 / self.sorted.len() as f64
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

pub fn ecdf(sample: &[f64]) -> Result<Ecdf> {
    Ecdf::new(sample)
}

/// Kolmogorov–Smirnov statistic with its asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Effective sample size below which the asymptotic p-value is rough.
    pub small_sample: bool,
}

/// `Q_KS(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let sq = effective_n.sqrt();
    kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d)
}

const KS_SMALL_SAMPLE: f64 = 35.0;

/// Two-sample KS test. Ties are handled by stepping both ECDFs past each
/// distinct value before comparing.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("ks_two_sample"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, ne),
        small_sample: ne < KS_SMALL_SAMPLE,
    })
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(Error::EmptySample("ks_one_sample"));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        small_sample: n < KS_SMALL_SAMPLE,
    })
}

/// Weighted least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard errors assuming the weights are inverse variances.
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn weighted_linfit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LinFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::Domain("weighted_linfit: length mismatch".into()));
    }
    if x.len() < 2 {
        return Err(Error::EmptySample("weighted_linfit needs two points"));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::Domain("weighted_linfit: weights must sum to > 0".into()));
    }
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        sxx += wi * (xi - xm) * (xi - xm);
        sxy += wi * (xi - xm) * (yi - ym);
    }
    if !(sxx > 0.0) {
        return Err(Error::Domain("weighted_linfit: degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    Ok(LinFit {
        slope,
        intercept,
        slope_se: (1.0 / sxx).sqrt(),
        intercept_se: (1.0 / sw + xm * xm / sxx).sqrt(),
    })
}

/// Pearson's chi-square test of homogeneity for two binned samples.
/// Bins where both counts vanish are skipped. Returns `(statistic, dof, p)`.
pub fn chi2_homogeneity(a: &[u64], b: &[u64]) -> Result<(f64, usize, f64)> {
    if a.len() != b.len() {
        return Err(Error::Domain("chi2_homogeneity: bin count mismatch".into()));
    }
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    if na == 0.0 || nb == 0.0 {
        return Err(Error::EmptySample("chi2_homogeneity"));
    }
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&ca, &cb) in a.iter().zip(b) {
        let tot = (ca + cb) as f64;
        if tot == 0.0 {
            continue;
        }
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        stat += (ca as f64 - ea).powi(2) / ea + (cb as f64 - eb).powi(2) / eb;
        bins += 1;
    }
    if bins < 2 {
        return Ok((0.0, 0, 1.0));
    }
    let dof = bins - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()))?.cdf(stat);
    Ok((stat, dof, p))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::EmptySample("spearman"));
    }
    pearson(&ranks(a), &ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::EmptySample("pearson"));
    }
    let (ma, va) = mean_var(a)?;
    let (mb, vb) = mean_var(b)?;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS_K[7] * fc;
    let mut g = GK_WEIGHTS_G[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WEIGHTS_K[i] * s;
        if i % 2 == 1 {
            g += GK_WEIGHTS_G[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gauss_kronrod(f, a, b);
    if err <= tol || depth == 0 {
        return val;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive 7–15 Gauss–Kronrod quadrature of `f` on a finite `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    adapt(&f, a, b, tol, 40)
}

/// `∫_a^∞ f`, via the substitution `x = a + u / (1 - u)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    let g = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - u;
        let x = a + u / one_minus;
        let v = f(x) / (one_minus * one_minus);
        if v.is_finite() { v } else { 0.0 }
    };
    integrate(g, 0.0, 1.0, tol)
}
