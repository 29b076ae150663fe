//! Bit-stream feature based decoding energy modeling.
//!
//! The decoding energy of a bit stream is modeled as a weighted sum of
//! feature occurrence counts, `E = sum_j e_j * n_j`. This crate provides the
//! FV/FVS feature catalogs, dataset ingestion, a bound-constrained linear
//! least-squares fitter for the coefficients `e_j`, k-fold cross-validation,
//! a synthetic ground-truth generator, and the decode/idle energy measurement
//! loop with its confidence-interval stopping rule.

pub mod catalog;
pub mod dataset;
pub mod estimator;
pub mod evaluation;
pub mod measurement;
pub mod synth;
mod util;

pub use catalog::{BlockShape, CountingLevel, FeatureCatalog, ModelKind};
pub use dataset::{BitstreamRecord, Dataset, Setup, Tool};
pub use estimator::{EnergyModel, FitConfig};
pub use evaluation::{EvaluationReport, FoldAssignment};
pub use util::write_atomic;

/// Toolkit version stamped into every JSON artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
