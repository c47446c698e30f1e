//! Squared Bessel processes of dimension 0 and 1.
//!
//! The 0-dimensional process drives the local-time field: its semigroup has
//! an atom `exp(-x / 2t)` at zero plus an absolutely continuous part with a
//! density involving `I_1`. Steps are drawn exactly through the
//! Poisson–Gamma mixture `N ~ Poisson(x / 2t)`, `X_t = 2t * Gamma(N, 1)`
//! (`X_t = 0` when `N = 0`). The 1-dimensional process is the square of a
//! Brownian motion and is only used for the change-of-measure diagnostic.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::variates::{gamma_unit, poisson};

/// Argument at which `I_1` switches from the power series to the
/// large-argument expansion.
pub const I1_CROSSOVER: f64 = 30.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn i1_series(z: f64) -> f64 {
    let half = 0.5 * z;
    let q = half * half;
    let mut term = half;
    let mut sum = half;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
    }
}

/// `sum_k (-1)^k a_k(1) / z^k` of the large-argument expansion of `I_1`.
fn i1_asymptotic_factor(z: f64) -> f64 {
    let mut term = 1.0f64;
    let mut sum = 1.0;
    for k in 1..40 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (4.0 - odd * odd) / (k as f64 * 8.0 * z);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    sum
}

/// Modified Bessel function of the first kind of order one, `z >= 0`.
pub fn i1(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z < I1_CROSSOVER {
        i1_series(z)
    } else {
        i1_log(z).exp()
    }
}

/// `ln I_1(z)`, finite for every `z > 0`.
pub fn i1_log(z: f64) -> f64 {
    if z <= 0.0 {
        f64::NEG_INFINITY
    } else if z < I1_CROSSOVER {
        i1_series(z).ln()
    } else {
        z - 0.5 * z.ln() - LN_SQRT_2PI + i1_asymptotic_factor(z).ln()
    }
}

/// Mass that `Q_t^0(x, .)` puts on the absorbing state 0.
pub fn besq0_atom(x: f64, t: f64) -> f64 {
    (-x / (2.0 * t)).exp()
}

/// Logarithm of the density `q_t^0(x, y)` of the continuous part.
pub fn besq0_log_density(x: f64, y: f64, t: f64) -> f64 {
    if x <= 0.0 || y <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -(2.0 * t).ln() + 0.5 * (x.ln() - y.ln()) - (x + y) / (2.0 * t) + i1_log((x * y).sqrt() / t)
}

/// `q_t^0(x, y) = (1/2t) sqrt(x/y) exp(-(x+y)/2t) I_1(sqrt(xy)/t)`.
pub fn besq0_density(x: f64, y: f64, t: f64) -> f64 {
    besq0_log_density(x, y, t).exp()
}

/// One transition of a 0-dimensional squared Bessel process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesqStep {
    start: f64,
    duration: f64,
}

impl BesqStep {
    pub fn new(start: f64, duration: f64) -> Result<Self> {
        if !(start >= 0.0) || !start.is_finite() {
            return Err(Error::Domain(format!("start {start} must be finite and >= 0")));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Domain(format!("duration {duration} must be finite and > 0")));
        }
        Ok(BesqStep { start, duration })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }
}

/// Exact draw from `Q_t^0(x, .)`.
pub fn sample_besq0_step<R: Rng + ?Sized>(step: BesqStep, rng: &mut R) -> f64 {
    besq0_transition(step.start, step.duration, rng)
}

/// Unchecked form of [`sample_besq0_step`] for hot loops.
#[inline]
pub(crate) fn besq0_transition<R: Rng + ?Sized>(x: f64, t: f64, rng: &mut R) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let n = poisson(x / (2.0 * t), rng);
    if n == 0 {
        0.0
    } else {
        2.0 * t * gamma_unit(n as f64, rng)
    }
}

/// A path sampled on a regular grid `0, dt, 2 dt, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct BesqPath {
    dt: f64,
    values: Vec<f64>,
    /// First grid index at which the path is known to have reached 0.
    first_zero: Option<usize>,
}

impl BesqPath {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("grid step {dt} must be > 0")));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("path values must be >= 0".into()));
        }
        let first_zero = values.iter().position(|&v| v == 0.0);
        Ok(BesqPath {
            dt,
            values,
            first_zero,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first_zero(&self) -> Option<usize> {
        self.first_zero
    }

    /// Path observed on every `stride`-th grid point.
    pub fn coarsen(&self, stride: usize) -> BesqPath {
        let stride = stride.max(1);
        let values: Vec<f64> = self.values.iter().step_by(stride).copied().collect();
        BesqPath {
            dt: self.dt * stride as f64,
            first_zero: self.first_zero.map(|i| i.div_ceil(stride)),
            values,
        }
    }
}

/// Squared Brownian motion `B_s^2` with `B_0 = sqrt(x)` on `[0, horizon]`.
///
/// Increments of `B` are exact Gaussians. A sign change of `B` between two
/// grid points marks the later point as the first zero.
pub fn sample_besq1_path<R: Rng + ?Sized>(
    x: f64,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<BesqPath> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("grid step {dt} must be > 0")));
    }
    if !(x >= 0.0) || !(horizon >= 0.0) {
        return Err(Error::Domain("start and horizon must be >= 0".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let sd = dt.sqrt();
    let mut b = x.sqrt();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(x);
    let mut first_zero = if x == 0.0 { Some(0) } else { None };
    for i in 1..=steps {
        let z: f64 = StandardNormal.sample(rng);
        let next = b + sd * z;
        if first_zero.is_none() && (next == 0.0 || next.signum() != b.signum()) {
            first_zero = Some(i);
        }
        b = next;
        values.push(b * b);
    }
    Ok(BesqPath {
        dt,
        values,
        first_zero,
    })
}

/// Density of the 0-dimensional law against the 1-dimensional one on
/// `F_t ∩ {H_0 > t}`: `(x / X_t)^{1/4} exp(-(3/8) ∫_0^t ds / X_s)`.
///
/// The integral is the trapezoid rule on the path grid. Paths that reach 0
/// by time `t` lie outside the event and get weight 0.
pub fn rn_weight_0_over_1(path: &BesqPath, x: f64, t: f64) -> Result<f64> {
    let m = (t / path.dt).round() as usize;
    if m >= path.values.len() {
        return Err(Error::Domain(format!(
            "time {t} beyond path horizon {}",
            path.dt * (path.values.len() - 1) as f64
        )));
    }
    if path.first_zero.is_some_and(|i| i <= m) {
        return Ok(0.0);
    }
    let vals = &path.values[..=m];
    let mut integral = 0.0;
    for w in vals.windows(2) {
        integral += 0.5 * (1.0 / w[0] + 1.0 / w[1]) * path.dt;
    }
    Ok((x / vals[m]).powf(0.25) * (-0.375 * integral).exp())
}
