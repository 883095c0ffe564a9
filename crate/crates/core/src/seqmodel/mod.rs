//! Segment-recurrent self-attention language model over token indices.
//!
//! Each layer attends over its own inputs from the previous segment (the
//! [`Memory`], held constant during differentiation) and the current
//! segment, with relative positional attention and two learned global
//! biases. Everything runs in `f64`; gradients are computed by hand.

mod checkpoint;
mod config;
mod params;
mod sample;
pub mod tensor;
mod train;
mod transformer;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_HEADER};
pub use config::ModelConfig;
pub use params::{LayerParams, ModelParams};
pub use sample::{sample, sampling_distribution, DecodeContext, Decoder, SampleOptions};
pub use tensor::Matrix;
pub use train::{
    evaluate, loss_and_grads, loss_and_grads_with, train, train_from, Adam, BatchItem, DropoutSpec, EpochLog, LossAndGrads,
    TrainConfig, TrainReport,
};
pub use transformer::forward;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-layer cached inputs of up to `memory_len` earlier positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    pub layers: Vec<Matrix>,
}

impl Memory {
    pub fn empty(config: &ModelConfig) -> Self {
        Memory { layers: (0..config.n_layers).map(|_| Matrix::zeros(0, config.model_dim)).collect() }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |m| m.rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check(&self, c: &ModelConfig) -> Result<(), ModelError> {
        let p = self.len();
        let ok = self.layers.len() == c.n_layers
            && p <= c.memory_len
            && self.layers.iter().all(|m| m.rows == p && (m.cols == c.model_dim || p == 0));
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidArgument(format!(
                "memory shape does not match config ({} layers, {} rows)",
                self.layers.len(),
                p
            )))
        }
    }
}
