//! Decoder-only transformer over the unified vocabulary: pre-norm blocks
//! with rotary attention and a SiLU MLP, tied input/output embedding, a
//! training forward on the autodiff tape, and a cached inference path that
//! captures observation K/V and attends over fused memory.

mod checkpoint;
mod config;
mod decode;
mod forward;
mod infer;
mod kv;
mod params;

pub use checkpoint::Checkpoint;
pub use config::{evenly_spaced_layers, ModelConfig};
pub use decode::{allowed_ids, decode_constrained, decode_in_session, select_token, SamplingConfig};
pub use forward::{trace_forward, Traced};
pub use infer::{forward, FeedOutput, Session};
pub use kv::{KvBlock, LayerKV};
pub use params::{LayerParams, ModelParams};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {0} outside the vocabulary")]
    Token(u32),
    #[error("fused memory mismatch: {0}")]
    Memory(String),
    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
