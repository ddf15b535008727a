//! Single-file run configuration shared by every command.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::model::ModelConfig;
use crate::rollout::RolloutConfig;
use crate::tokenizers::VocabLayout;
use crate::training::TrainConfig;
use crate::worldsim::{sha256_hex, WorldConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config does not match the schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Codebook entries `N`.
    pub codebook_size: usize,
    /// Square patch side in pixels.
    pub patch: usize,
    pub pose_bins: usize,
    pub kmeans_iters: usize,
    /// Patches sampled from the training frames for fitting.
    pub max_patches: usize,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            codebook_size: 256,
            patch: 4,
            pose_bins: 64,
            kmeans_iters: 20,
            max_patches: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub tokenizer: TokenizerConfig,
    /// `vocab_size` is derived from the tokenizer section and may be left 0.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Content hash of the canonical serialization.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn layout(&self) -> VocabLayout {
        VocabLayout::new(self.tokenizer.pose_bins, self.tokenizer.codebook_size)
    }

    pub fn tokens_per_image(&self) -> usize {
        let p = self.tokenizer.patch.max(1);
        (self.world.resolution / p) * (self.world.resolution / p)
    }

    /// Model section with the vocabulary filled in from the tokenizer.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { vocab_size: self.layout().vocab_size(), ..self.model.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.world.validate().map_err(|e| inv(e.to_string()))?;
        let t = &self.tokenizer;
        if t.codebook_size == 0 || t.patch == 0 || t.pose_bins == 0 || t.kmeans_iters == 0 || t.max_patches == 0 {
            return Err(inv("tokenizer sizes must be positive".into()));
        }
        if self.world.resolution % t.patch != 0 {
            return Err(inv(format!("resolution {} is not a multiple of patch {}", self.world.resolution, t.patch)));
        }
        let m = self.model_config();
        if self.model.vocab_size != 0 && self.model.vocab_size != m.vocab_size {
            return Err(inv(format!("model.vocab_size {} disagrees with the tokenizer ({})", self.model.vocab_size, m.vocab_size)));
        }
        m.validate().map_err(|e| inv(e.to_string()))?;
        self.train.validate().map_err(|e| inv(e.to_string()))?;
        self.rollout.validate().map_err(|e| inv(e.to_string()))?;
        if self.eval.n_list.contains(&0) {
            return Err(inv("eval.n_list entries must be positive".into()));
        }
        // world-model samples are the longest: planner prompt, action, mark, frame, EOS
        let n = self.tokens_per_image();
        let extra = self.train.context_frames.max(self.rollout.context_frames) - 1;
        let longest = 16 + 4 * n + extra * (n + 1);
        if longest > m.context_len {
            return Err(inv(format!("samples of {longest} tokens exceed context_len {}", m.context_len)));
        }
        Ok(())
    }
}

/// JSON schema of [`RunConfig`], as published in `schemas/run_config.schema.json`.
pub fn run_config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}
