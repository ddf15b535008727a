//! Role-specific objectives, interleaved sample construction and the
//! optimization loop.

mod data;
mod losses;
mod trainer;

pub use data::{
    build_sample, encode_trajectories, enumerate_samples, make_interleaved_batches, EncodedTrajectory, SampleRef,
    StepStrategy,
};
pub use losses::{
    logit_rows, loss_label_smoothing, loss_plan, loss_stop_gate, loss_world, sample_loss, targets, LossSpec,
    PlanLoss, SampleLoss, WorldLoss,
};
pub use trainer::{
    sample_gradients, CsvLog, SampleGradients, EpochStats, LogSink, StepRecord, TrainConfig, TrainState, TrainSummary, Trainer,
};

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::tokenizers::TokenizerError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("malformed sample: {0}")]
    Sample(String),
    #[error("unexpected target: {0}")]
    Target(String),
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("non-finite loss at step {step}, batch {batch} (epoch {epoch})")]
    NonFinite { step: u64, epoch: usize, batch: usize },
    #[error("unknown loss ablation {0:?}, expected bin-rec, bin-ls, ls-rec or ls-ls")]
    Ablation(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
