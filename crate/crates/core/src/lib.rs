//! Local times of continuous-time simple random walk on a finite b-ary tree,
//! stopped at an inverse local time of the root.
//!
//! The crate holds two samplers of the same field (a direct walk and the
//! generation-by-generation squared Bessel sampler), the Gaussian branching
//! random walk it approximates, the derived cascade measure, and the
//! extremal statistics built on top of them. [`harness`] runs experiments
//! from a JSON configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod besq;
pub mod cascade;
pub mod error;
pub mod extremes;
pub mod field;
pub mod gaussian;
pub mod harness;
pub mod rng;
pub mod stats;
pub mod tree;
pub mod variates;
pub mod walker;

pub use error::{Error, Result};
pub use field::{sample_field, sample_subtree, FieldSampler};
pub use gaussian::{sample_brw, GaussianField};
pub use tree::{TreeAddress, TreeShape};
pub use walker::{run_inverse_local_time, LocalTimeField, WalkConfig};
