//! Membership-inference auditing for time-series imputation models.
//!
//! A candidate series is masked, completed by both the audited (target)
//! imputer and a reference imputer of comparable skill, and each completion is
//! compared to the truth with dynamic time warping. The ratio of the two
//! losses is low when the target reproduces the candidate much better than
//! the reference does, which is the signature of a memorized training sample.
//!
//! Modules:
//! - [`series`]: series, masks, the [`ImputationOracle`] boundary
//! - [`dtw`]: the alignment loss
//! - [`models`]: trainable desk-scale imputers
//! - [`attack`]: ratio scoring, threshold calibration, the loss-only baseline
//! - [`metrics`]: ROC, AUROC and TPR summaries
//! - [`data`]: synthetic corpora, scenario splits, CSV I/O
//! - [`harness`]: end-to-end experiment pipelines

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod dtw;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod series;

pub use error::{Error, Result};
pub use series::{
    apply_mask, random_missing_mask, single_unit_mask, zscore_normalize, ImputationOracle,
    MaskMatrix, MaskSpec, MaskedSeries, NormParams, TimeSeries,
};
