//! Navigation and image-fidelity metrics and the evaluation harness.

pub mod metrics;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {pred} predicted vs {gt} reference")]
    Length { pred: usize, gt: usize },
    #[error("trajectory of {0} poses is too short")]
    TooShort(usize),
    #[error("image dimensions differ: {0}")]
    Dimension(String),
}

mod harness;
mod report;

pub use harness::{
    aggregate, evaluate, json_max_abs_diff, rollout_metrics_at_n, Aggregate, EvalConfig, HarnessError, MetricReport,
    Provenance, TrajectoryMetrics, ATE_CONVENTION, METRICS_SCHEMA_VERSION,
};
pub use report::{comparison_table, ReportTable};
