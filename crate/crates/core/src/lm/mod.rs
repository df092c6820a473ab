//! Miniature decoder-only language model.
//!
//! Parameters are split into the token embedding block (`θ_E`) and
//! everything else (`θ_n`): positional table, transformer blocks, final norm
//! and an untied output head. Fingerprinting variants rely on that split.

pub mod checkpoint;
mod config;
pub mod decode;
pub mod loss;
pub mod network;
mod params;
pub mod tokenizer;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use decode::{generate, DecodePolicy};
pub use loss::{causal_lm_loss, causal_lm_loss_with_targets, LossOutput};
pub use network::{forward, GradScope, Gradients, Network};
pub use params::{LayerParams, ModelParameters, ParamGroup};
pub use tokenizer::{detokenize, tokenize, TokenSequence, BOS};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type of every tensor. Training runs in `f32`; gradient checks
/// instantiate the same code with `f64`.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
