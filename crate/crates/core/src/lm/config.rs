use serde::{Deserialize, Serialize};

use super::tokenizer::BOS;
use crate::{Error, Result};

/// Shape and seed of the toy causal LM.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: BOS as usize + 1,
            max_seq_len: 512,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// One-layer, eight-wide model used by the numerical checks.
    pub fn tiny(seed: u64) -> Self {
        Self {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: BOS as usize + 1,
            max_seq_len: 32,
            seed,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= BOS as usize {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} cannot hold 256 bytes plus BOS",
                self.vocab_size
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::InvalidConfig("max_seq_len must be at least 2".into()));
        }
        Ok(())
    }

    /// Architecture signature used to decide whether two models are comparable.
    pub fn same_shape(&self, other: &ModelConfig) -> bool {
        self.n_layers == other.n_layers
            && self.d_model == other.d_model
            && self.n_heads == other.n_heads
            && self.d_ff == other.d_ff
            && self.vocab_size == other.vocab_size
            && self.max_seq_len == other.max_seq_len
    }
}
