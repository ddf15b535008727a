//! Unified discrete vocabulary: patch codebook, signed action bins, pose
//! bins, structural markers, and sample assembly for both substeps.

mod action;
mod codebook;
mod sample;
mod vocab;

pub use action::{bin_index, decode_action, encode_action, encode_pose, pose_bins_of, MapExtent, BIN_SIZE};
pub use codebook::{extract_patches, fit_codebook, Codebook, CHANNELS};
pub use sample::{
    build_both_sample, build_planner_sample, build_prompt, build_world_prompt, build_world_sample, Prompt,
    PromptParts, Role, TokenSample,
};
pub use vocab::{ActionDim, Special, TokenKind, VocabLayout};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("only {distinct} distinct patches, need at least {needed}")]
    TooFewPatches { distinct: usize, needed: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("id {id} outside the {what} range")]
    OutOfRange { id: u32, what: &'static str },
    #[error("action component {0} outside ±0.99")]
    ActionOutOfRange(f64),
    #[error("malformed action tokens: {0}")]
    MalformedAction(String),
    #[error("pose ({x:.3}, {y:.3}) outside the map extent")]
    PoseOutOfExtent { x: f64, y: f64 },
    #[error("sample of {len} tokens exceeds context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("stop is not a valid world-model input")]
    StopAsInput,
    #[error("bad codebook file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
