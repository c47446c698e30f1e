//! Distributional checks that compare two samplers of the same law.

use rand::Rng;
use serde::Serialize;

use crate::besq::{besq0_atom, besq0_density, besq0_transition};
use crate::error::{Error, Result};
use crate::field::FieldSampler;
use crate::gaussian::sample_brw;
use crate::rng::{derive_master, replicate_rng};
use crate::stats::{chi2_homogeneity, integrate, integrate_to_infinity, ks_one_sample, ks_two_sample, KsResult};
use crate::tree::TreeShape;
use crate::walker::{run_inverse_local_time, WalkConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexKs {
    pub vertex: String,
    pub level: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTest {
    pub parent: String,
    pub child: String,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub passed: bool,
}

/// Per-vertex two-sample KS comparison of two fields given as per-replicate
/// vectors, plus a binned test of one parent-child pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldComparison {
    pub b: usize,
    pub n: usize,
    pub t: f64,
    pub replicates: usize,
    pub alpha: f64,
    /// Per-test level after the Bonferroni correction over vertices.
    pub vertex_alpha: f64,
    pub vertices: Vec<VertexKs>,
    pub pair: Option<PairTest>,
    pub passed: bool,
}

impl FieldComparison {
    /// True when some leaf test rejects.
    pub fn leaf_rejected(&self) -> bool {
        self.vertices.iter().any(|v| v.level == self.n && !v.passed)
    }
}

/// Edges for binning a sample with a possible atom at 0: bin 0 holds exact
/// zeros, the positive values are split at their pooled quantiles.
fn atom_quantile_edges(pooled: &[f64], bins: usize) -> Vec<f64> {
    let mut pos: Vec<f64> = pooled.iter().copied().filter(|&v| v > 0.0).collect();
    pos.sort_by(f64::total_cmp);
    if pos.is_empty() {
        return Vec::new();
    }
    let mut edges: Vec<f64> = (1..bins).map(|k| pos[k * pos.len() / bins]).collect();
    edges.dedup();
    edges
}

fn bin_of(v: f64, edges: &[f64]) -> usize {
    if v <= 0.0 {
        0
    } else {
        1 + edges.partition_point(|&e| e <= v)
    }
}

/// Chi-square homogeneity test on the joint bins of `(x, y)` pairs.
pub fn binned_pair_test(a: &[(f64, f64)], b: &[(f64, f64)], bins: usize) -> Result<(f64, usize, f64)> {
    let pooled_x: Vec<f64> = a.iter().chain(b).map(|p| p.0).collect();
    let pooled_y: Vec<f64> = a.iter().chain(b).map(|p| p.1).collect();
    let ex = atom_quantile_edges(&pooled_x, bins);
    let ey = atom_quantile_edges(&pooled_y, bins);
    let ny = ey.len() + 2;
    let cells = (ex.len() + 2) * ny;
    let table = |pairs: &[(f64, f64)]| {
        let mut counts = vec![0u64; cells];
        for &(x, y) in pairs {
            counts[bin_of(x, &ex) * ny + bin_of(y, &ey)] += 1;
        }
        counts
    };
    chi2_homogeneity(&table(a), &table(b))
}

const PAIR_BINS: usize = 6;

/// Compares two samples of a field, each a list of level-major vectors.
pub fn compare_fields(shape: TreeShape, t: f64, a: &[Vec<f64>], b: &[Vec<f64>], alpha: f64) -> Result<FieldComparison> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("compare_fields"));
    }
    let nv = shape.num_vertices();
    let vertex_alpha = alpha / nv as f64;
    let mut vertices = Vec::with_capacity(nv);
    for level in 0..=shape.depth() {
        for idx in 0..shape.level_len(level) {
            let k = shape.level_offset(level) + idx;
            let xa: Vec<f64> = a.iter().map(|v| v[k]).collect();
            let xb: Vec<f64> = b.iter().map(|v| v[k]).collect();
            let ks = ks_two_sample(&xa, &xb)?;
            vertices.push(VertexKs {
                vertex: shape.address_at(level, idx)?.to_string(),
                level,
                statistic: ks.statistic,
                p_value: ks.p_value,
                passed: ks.p_value >= vertex_alpha,
            });
        }
    }
    let pair = if shape.depth() >= 2 {
        // The root is deterministic, so the pair is taken one level down.
        let parent = shape.level_offset(shape.depth() - 1);
        let child = shape.level_offset(shape.depth());
        let pa: Vec<(f64, f64)> = a.iter().map(|v| (v[parent], v[child])).collect();
        let pb: Vec<(f64, f64)> = b.iter().map(|v| (v[parent], v[child])).collect();
        let (statistic, dof, p_value) = binned_pair_test(&pa, &pb, PAIR_BINS)?;
        Some(PairTest {
            parent: shape.address_at(shape.depth() - 1, 0)?.to_string(),
            child: shape.address_at(shape.depth(), 0)?.to_string(),
            statistic,
            dof,
            p_value,
            passed: p_value >= alpha,
        })
    } else {
        None
    };
    let passed = vertices.iter().all(|v| v.passed) && pair.as_ref().is_none_or(|p| p.passed);
    Ok(FieldComparison {
        b: shape.branching(),
        n: shape.depth(),
        t,
        replicates: a.len().min(b.len()),
        alpha,
        vertex_alpha,
        vertices,
        pair,
        passed,
    })
}

/// `{L + h^2 / 2}` against `{(h + sqrt(2t))^2 / 2}` vertex by vertex, with
/// `L` from `sampler` and each `h` an independent BRW.
pub fn isomorphism_with<R: Rng + ?Sized>(
    sampler: FieldSampler,
    b: usize,
    n: usize,
    t: f64,
    replicates: usize,
    rng: &mut R,
) -> Result<FieldComparison> {
    let shape = TreeShape::new(b, n)?;
    let shift = (2.0 * t).sqrt();
    let mut lhs = Vec::with_capacity(replicates);
    let mut rhs = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let l = sampler.sample_field(shape, t, rng)?;
        let h = sample_brw(shape, rng);
        lhs.push(l.values().iter().zip(h.values()).map(|(l, h)| l + 0.5 * h * h).collect());
        let g = sample_brw(shape, rng);
        // Expanded so that h = 0 gives exactly t.
        rhs.push(g.values().iter().map(|h| 0.5 * h * h + shift * h + t).collect());
    }
    compare_fields(shape, t, &lhs, &rhs, 0.01)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsomorphismReport {
    pub exact: FieldComparison,
    /// The same test with the edge duration halved.
    pub negative_control: FieldComparison,
    pub negative_control_rejected: bool,
    pub passed: bool,
}

/// The isomorphism test for the exact sampler and for the duration-1/2
/// negative control, which must be rejected at the leaves.
pub fn verify_isomorphism<R: Rng + ?Sized>(b: usize, n: usize, t: f64, replicates: usize, rng: &mut R) -> Result<IsomorphismReport> {
    let exact = isomorphism_with(FieldSampler::default(), b, n, t, replicates, rng)?;
    let negative_control = isomorphism_with(FieldSampler::with_edge_duration(0.5)?, b, n, t, replicates, rng)?;
    let rejected = negative_control.leaf_rejected();
    Ok(IsomorphismReport {
        passed: exact.passed && rejected,
        exact,
        negative_control_rejected: rejected,
        negative_control,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerEquivalence {
    pub comparison: FieldComparison,
    pub aborted: usize,
}

/// Field sampler against the direct walk. Both use per-replicate streams
/// from one master seed, separated by `derive_master`.
pub fn compare_samplers(b: usize, n: usize, t: f64, replicates: usize, master_seed: u64, excursion_cap: u64) -> Result<SamplerEquivalence> {
    let shape = TreeShape::new(b, n)?;
    let field_master = derive_master(master_seed, 1);
    let walk_master = derive_master(master_seed, 2);
    let fields: Vec<Vec<f64>> = (0..replicates as u64)
        .map(|i| Ok(FieldSampler::default().sample_field(shape, t, &mut replicate_rng(field_master, i))?.into_values()))
        .collect::<Result<_>>()?;
    let cfg = WalkConfig::new(shape, t, walk_master)?.with_excursion_cap(excursion_cap);
    let mut walks = Vec::with_capacity(replicates);
    let mut aborted = 0;
    for i in 0..replicates as u64 {
        match run_inverse_local_time(&cfg, &mut replicate_rng(walk_master, i)) {
            Ok(f) => walks.push(f.into_values()),
            Err(Error::ExcursionCapExceeded { .. }) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    if aborted * 1000 > replicates {
        return Err(Error::TooManyAborted { aborted, total: replicates });
    }
    Ok(SamplerEquivalence {
        comparison: compare_fields(shape, t, &fields, &walks, 0.01)?,
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BesselReport {
    pub x: f64,
    pub t: f64,
    pub draws: usize,
    pub atoms: usize,
    pub atom_probability: f64,
    /// `(atoms - draws p) / sqrt(draws p (1 - p))`.
    pub atom_z: f64,
    /// KS of the positive draws against the conditional law from the density.
    pub ks: KsResult,
    /// `|atom + int q - 1|`.
    pub mass_error: f64,
    /// `|int y q - x|`.
    pub mean_error: f64,
    pub passed: bool,
}

/// Tabulated CDF of the continuous part, integrated cell by cell.
struct DensityTable {
    h: f64,
    cumulative: Vec<f64>,
}

impl DensityTable {
    fn new(x: f64, t: f64) -> Self {
        let y_max = x + 40.0 * (x * t).sqrt() + 60.0 * t;
        let h = (y_max / 50_000.0).min(0.002);
        let cells = (y_max / h).ceil() as usize;
        let mut cumulative = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for i in 0..cells {
            let a = i as f64 * h;
            acc += integrate(|y| besq0_density(x, y, t), a, a + h, 1e-15);
            cumulative.push(acc);
        }
        DensityTable { h, cumulative }
    }

    fn eval(&self, y: f64) -> f64 {
        let pos = y / self.h;
        let i = pos.floor() as usize;
        if i + 1 >= self.cumulative.len() {
            return *self.cumulative.last().unwrap_or(&0.0);
        }
        let f = pos - i as f64;
        self.cumulative[i] * (1.0 - f) + self.cumulative[i + 1] * f
    }
}

/// Exactness checks of the BESQ0 transition sampler started at `x` over
/// time `t`: atom frequency within 3 sigma, KS of the positive part at 0.01,
/// mass to 1e-8 and mean to 1e-6 by quadrature.
pub fn bessel_check<R: Rng + ?Sized>(x: f64, t: f64, draws: usize, rng: &mut R) -> Result<BesselReport> {
    if !(x > 0.0 && t > 0.0) {
        return Err(Error::Domain(format!("bessel check needs x > 0 and t > 0, got x={x} t={t}")));
    }
    if draws == 0 {
        return Err(Error::EmptySample("bessel_check draws"));
    }
    let sample: Vec<f64> = (0..draws).map(|_| besq0_transition(x, t, rng)).collect();
    let positive: Vec<f64> = sample.iter().copied().filter(|&v| v > 0.0).collect();
    let atoms = draws - positive.len();
    let p = besq0_atom(x, t);
    let atom_z = (atoms as f64 - draws as f64 * p) / (draws as f64 * p * (1.0 - p)).sqrt();
    let table = DensityTable::new(x, t);
    let continuous = 1.0 - p;
    let ks = ks_one_sample(&positive, |y| table.eval(y) / continuous)?;
    let mass = p + integrate_to_infinity(|y| besq0_density(x, y, t), 0.0, 1e-13);
    let mean = integrate_to_infinity(|y| y * besq0_density(x, y, t), 0.0, 1e-12);
    let mass_error = (mass - 1.0).abs();
    let mean_error = (mean - x).abs();
    Ok(BesselReport {
        x,
        t,
        draws,
        atoms,
        atom_probability: p,
        atom_z,
        passed: atom_z.abs() <= 3.0 && ks.p_value >= 0.01 && mass_error <= 1e-8 && mean_error <= 1e-6,
        ks,
        mass_error,
        mean_error,
    })
}
