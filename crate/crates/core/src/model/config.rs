use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub context_len: usize,
    /// Filled from the vocabulary layout when left at 0.
    pub vocab_size: usize,
    /// Layers whose attention reads fused memory. Empty means
    /// `save_layer_count` evenly spaced layers.
    pub l_save: Vec<usize>,
    pub save_layer_count: usize,
    pub rope_base: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            n_heads: 4,
            d_model: 128,
            context_len: 512,
            vocab_size: 0,
            l_save: Vec::new(),
            save_layer_count: 5,
            rope_base: 10000.0,
            init_std: 0.02,
        }
    }
}

/// `count` layer indices spread over `[0, n_layers - 1]` with both ends
/// included, floored and deduplicated.
pub fn evenly_spaced_layers(n_layers: usize, count: usize) -> Vec<usize> {
    if n_layers == 0 || count == 0 {
        return Vec::new();
    }
    if count >= n_layers {
        return (0..n_layers).collect();
    }
    if count == 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count).map(|i| i * (n_layers - 1) / (count - 1)).collect();
    out.dedup();
    out
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        4 * self.d_model
    }

    /// Resolved memory layers, ascending.
    pub fn save_layers(&self) -> Vec<usize> {
        if self.l_save.is_empty() {
            evenly_spaced_layers(self.n_layers, self.save_layer_count)
        } else {
            let mut l = self.l_save.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
    }

    pub fn with_save_layer_count(mut self, count: usize) -> Self {
        self.l_save.clear();
        self.save_layer_count = count;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 {
            return bad("n_layers, n_heads and d_model must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.head_dim() % 2 != 0 {
            return bad("head_dim must be even for rotary encoding".into());
        }
        if self.vocab_size == 0 || self.context_len == 0 {
            return bad("vocab_size and context_len must be positive".into());
        }
        let l = self.save_layers();
        if l.is_empty() {
            return bad("at least one memory layer is required".into());
        }
        if l.iter().any(|&i| i >= self.n_layers) {
            return bad(format!("memory layers {l:?} outside 0..{}", self.n_layers));
        }
        if !(self.rope_base > 1.0) || !(self.init_std > 0.0) {
            return bad("rope_base must exceed 1 and init_std must be positive".into());
        }
        Ok(())
    }
}
