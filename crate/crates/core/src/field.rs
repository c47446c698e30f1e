//! Exact sampler of the stopped local-time field through its Markov
//! structure on the tree.
//!
//! Given the local time `l` of a vertex, the local times of its children are
//! independent, and each is `X_1 / 2` for a 0-dimensional squared Bessel
//! process started at `2 l` and run for one unit of time. One generation of
//! the tree is one unit of Bessel time. Generation is level by level, and
//! vertices whose parent is absorbed at 0 are set to 0 without touching the
//! generator.

use std::io::{Read, Write};

use rand::Rng;

use crate::besq::besq0_transition;
use crate::error::{Error, Result};
use crate::tree::TreeShape;
use crate::walker::LocalTimeField;

/// Bessel time elapsed along one edge. `FieldSampler::default()` is the exact
/// sampler; other durations exist only as negative controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSampler {
    edge_duration: f64,
}

impl Default for FieldSampler {
    fn default() -> Self {
        FieldSampler { edge_duration: 1.0 }
    }
}

impl FieldSampler {
    pub fn with_edge_duration(edge_duration: f64) -> Result<Self> {
        if !(edge_duration > 0.0) || !edge_duration.is_finite() {
            return Err(Error::Domain(format!(
                "edge duration {edge_duration} must be finite and > 0"
            )));
        }
        Ok(FieldSampler { edge_duration })
    }

    pub fn edge_duration(&self) -> f64 {
        self.edge_duration
    }

    /// Child local time given the parent's.
    #[inline]
    pub fn child_value<R: Rng + ?Sized>(&self, parent: f64, rng: &mut R) -> f64 {
        0.5 * besq0_transition(2.0 * parent, self.edge_duration, rng)
    }

    /// Fills `values` (level-major over `shape`) from the root value `root`.
    pub fn fill<R: Rng + ?Sized>(&self, shape: &TreeShape, root: f64, values: &mut Vec<f64>, rng: &mut R) {
        let b = shape.branching();
        values.clear();
        values.resize(shape.num_vertices(), 0.0);
        values[0] = root;
        for level in 1..=shape.depth() {
            let parent_start = shape.level_offset(level - 1);
            let start = shape.level_offset(level);
            for p in 0..shape.level_len(level - 1) {
                let parent = values[parent_start + p];
                if parent == 0.0 {
                    continue;
                }
                for k in 0..b {
                    values[start + p * b + k] = self.child_value(parent, rng);
                }
            }
        }
    }

    pub fn sample_subtree<R: Rng + ?Sized>(
        &self,
        root_value: f64,
        depth: usize,
        branching: usize,
        rng: &mut R,
    ) -> Result<LocalTimeField> {
        if !(root_value >= 0.0) || !root_value.is_finite() {
            return Err(Error::Domain(format!("root value {root_value} must be finite and >= 0")));
        }
        let shape = TreeShape::new(branching, depth)?;
        let mut values = Vec::new();
        self.fill(&shape, root_value, &mut values, rng);
        Ok(LocalTimeField::from_parts(shape, root_value, values))
    }

    pub fn sample_field<R: Rng + ?Sized>(&self, shape: TreeShape, t: f64, rng: &mut R) -> Result<LocalTimeField> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("stopping level t = {t} must be > 0")));
        }
        let mut values = Vec::new();
        self.fill(&shape, t, &mut values, rng);
        Ok(LocalTimeField::from_parts(shape, t, values))
    }
}

/// Exact sample of `(L_{tau(t)}(v))_{v in T_{<=n}}`.
pub fn sample_field<R: Rng + ?Sized>(shape: TreeShape, t: f64, rng: &mut R) -> Result<LocalTimeField> {
    FieldSampler::default().sample_field(shape, t, rng)
}

/// Local times on `T_{<=k}` below a vertex whose local time is `root_value`.
pub fn sample_subtree<R: Rng + ?Sized>(
    root_value: f64,
    depth: usize,
    branching: usize,
    rng: &mut R,
) -> Result<LocalTimeField> {
    FieldSampler::default().sample_subtree(root_value, depth, branching, rng)
}

/// Local times along a single root-to-leaf path, `n + 1` values.
pub fn sample_path_marginal<R: Rng + ?Sized>(t: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("stopping level t = {t} must be > 0")));
    }
    let sampler = FieldSampler::default();
    let mut path = Vec::with_capacity(n + 1);
    let mut current = t;
    path.push(current);
    for _ in 0..n {
        if current > 0.0 {
            current = sampler.child_value(current, rng);
        }
        path.push(current);
    }
    Ok(path)
}

const DUMP_MAGIC: &[u8; 4] = b"RWLT";
const DUMP_VERSION: u32 = 1;

/// Writes a field as `RWLT`, version (u32), b (u64), n (u64), t (f64),
/// seed (u64), then the level-major values as f64, all little-endian.
pub fn write_field_dump<W: Write>(mut out: W, field: &LocalTimeField, seed: u64) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_le_bytes())?;
    out.write_all(&(field.shape().branching() as u64).to_le_bytes())?;
    out.write_all(&(field.shape().depth() as u64).to_le_bytes())?;
    out.write_all(&field.t().to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    for v in field.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one field written by [`write_field_dump`], returning it with its seed.
pub fn read_field_dump<R: Read>(mut input: R) -> Result<(LocalTimeField, u64)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != DUMP_VERSION {
        return Err(Error::Format("unsupported version".into()));
    }
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<[u8; 8]> {
        input.read_exact(&mut word)?;
        Ok(word)
    };
    let b = u64::from_le_bytes(next(&mut input)?) as usize;
    let n = u64::from_le_bytes(next(&mut input)?) as usize;
    let t = f64::from_le_bytes(next(&mut input)?);
    let seed = u64::from_le_bytes(next(&mut input)?);
    let shape = TreeShape::new(b, n)?;
    let mut values = Vec::with_capacity(shape.num_vertices());
    for _ in 0..shape.num_vertices() {
        values.push(f64::from_le_bytes(next(&mut input)?));
    }
    Ok((LocalTimeField::new(shape, t, values)?, seed))
}
