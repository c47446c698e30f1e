//! Batches of exact field samples reduced to per-replicate records.

use std::ops::Range;

use serde::Serialize;

use crate::error::Result;
use crate::extremes::{centered_max, point_pattern, LaplaceBox, PairDepthHistogram};
use crate::field::FieldSampler;
use crate::rng::replicate_rng;
use crate::tree::TreeShape;

use super::par_map;

/// Which statistics to keep from each sampled field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBatch {
    pub shape: TreeShape,
    pub t: f64,
    pub master_seed: u64,
    pub replicates: Range<u64>,
    pub sampler: FieldSampler,
    /// Subtree depth of the point pattern used for `boxes`.
    pub pattern_depth: usize,
    pub boxes: Vec<LaplaceBox>,
    /// Offset below the centering for the near-maximum pair histogram.
    pub pair_offset: Option<f64>,
}

impl FieldBatch {
    pub fn new(shape: TreeShape, t: f64, master_seed: u64, replicates: Range<u64>) -> Self {
        FieldBatch {
            shape,
            t,
            master_seed,
            replicates,
            sampler: FieldSampler::default(),
            pattern_depth: 0,
            boxes: Vec::new(),
            pair_offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldRecord {
    pub replicate: u64,
    pub centered_max: f64,
    pub argmax: usize,
    /// Points of the depth-`pattern_depth` pattern in each box.
    pub box_counts: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PairDepthHistogram>,
}

/// Samples every replicate in `batch.replicates` with its own stream and
/// returns the records in replicate order.
pub fn run_field_batch(batch: &FieldBatch, workers: usize) -> Result<Vec<FieldRecord>> {
    par_map(workers, batch.replicates.clone(), |i| {
        let mut rng = replicate_rng(batch.master_seed, i);
        let field = batch.sampler.sample_field(batch.shape, batch.t, &mut rng)?;
        let max = centered_max(&field)?;
        let box_counts = if batch.boxes.is_empty() {
            Vec::new()
        } else {
            let pattern = point_pattern(&field, batch.pattern_depth)?;
            batch
                .boxes
                .iter()
                .map(|b| pattern.count(b.loc_lo, b.loc_hi, b.y_lo, b.y_hi) as u32)
                .collect()
        };
        let pairs = match batch.pair_offset {
            Some(offset) => {
                let mut h = PairDepthHistogram::new(batch.shape.depth());
                h.add_field(&field, offset)?;
                Some(h)
            }
            None => None,
        };
        Ok(FieldRecord {
            replicate: i,
            centered_max: max.centered,
            argmax: max.argmax_index,
            box_counts,
            pairs,
        })
    })
}

/// Pools the pair histograms of all records.
pub fn pooled_pairs(records: &[FieldRecord], n: usize) -> PairDepthHistogram {
    let mut total = PairDepthHistogram::new(n);
    for h in records.iter().filter_map(|r| r.pairs.as_ref()) {
        total.merge(h);
    }
    total
}
