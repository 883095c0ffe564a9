use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture and seed of a segment-recurrent attention model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub segment_len: usize,
    pub memory_len: usize,
    /// Output projection shares the embedding matrix.
    pub tie_embeddings: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: 3 layers, 4 heads, width 128.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 3,
            n_heads: 4,
            model_dim: 128,
            ffn_dim: 512,
            vocab_size,
            segment_len: 64,
            memory_len: 64,
            tie_embeddings: false,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidArgument(m.to_string()));
        if self.n_layers == 0 || self.n_heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return bad("layer count, head count and widths must be positive");
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return bad("model_dim must be divisible by n_heads");
        }
        if !self.model_dim.is_multiple_of(2) {
            return bad("model_dim must be even");
        }
        if self.vocab_size == 0 || self.vocab_size > u32::MAX as usize {
            return bad("vocab_size out of range");
        }
        if self.segment_len == 0 {
            return bad("segment_len must be positive");
        }
        Ok(())
    }

    /// Number of scalar parameters.
    pub fn n_params(&self) -> usize {
        let (d, f, v) = (self.model_dim, self.ffn_dim, self.vocab_size);
        let layer = 5 * d * d + 2 * d + 4 * d + d * f + f + f * d + d;
        v * d + self.n_layers * layer + if self.tie_embeddings { 0 } else { d * v }
    }
}
