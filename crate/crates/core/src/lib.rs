//! Trace-driven SQL workload synthesis.
//!
//! Given anonymized per-query execution targets (CPU time, scanned bytes) and
//! structural constraints (join/aggregate/sort counts), the crate builds query
//! graphs over a proxy dataset, tunes range predicates until the measured
//! execution matches the targets, and emits executable SQL.
//!
//! The numeric core ([`numeric`], [`costmodel`], [`gbdt`], [`bo`]) is generic
//! over the scalar type; the aliases at the crate root fix it to `f64`, which
//! is what the pipeline and the CLI use.

pub mod backend;
pub mod bo;
pub mod bounding;
pub mod catalog;
pub mod costmodel;
pub mod error;
pub mod gbdt;
pub mod numeric;
pub mod pipeline;
pub mod pool;
pub mod predsearch;
pub mod querygraph;
pub mod trace;
pub mod translator;

pub use error::{Error, Result};
pub use numeric::Scalar;

/// Local performance model over `f64`.
pub type LocalModel = costmodel::LocalModel<f64>;
/// Operator coefficients over `f64`.
pub type OperatorCoefficients = costmodel::OperatorCoefficients<f64>;
/// Profiling sample over `f64`.
pub type ProfileSample = costmodel::ProfileSample<f64>;
/// Operator feature vector over `f64`.
pub type OperatorFeatures = costmodel::OperatorFeatures<f64>;
/// Join feature set over `f64`.
pub type JoinFeatures = costmodel::JoinFeatures<f64>;
/// Gradient-boosted join regressor over `f64`.
pub type TreeEnsemble = gbdt::TreeEnsemble<f64>;
/// Ask/tell optimizer over `f64`.
pub type AskTell = bo::AskTell<f64>;
