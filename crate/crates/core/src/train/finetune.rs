use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{State, StepSettings};
use super::optim::Adam;
use super::{batches, AttentionLora};
use crate::data::{derive_seed, Instance, LossScope, TemplateKind};
use crate::lm::{GradScope, ModelParameters};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinetuneMethod {
    /// All parameters trainable.
    Full,
    /// Rank-`rank` additive factors on the attention projections only.
    LowRankAttention { rank: usize, scale: f64 },
}

impl FinetuneMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FinetuneMethod::Full => "full",
            FinetuneMethod::LowRankAttention { .. } => "low_rank_attention",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub loss_scope: LossScope,
    pub template: TemplateKind,
    pub grad_clip: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            epochs: 3,
            batch_size: 16,
            rng_seed: 11,
            loss_scope: LossScope::OutputOnly,
            template: TemplateKind::Simple,
            grad_clip: 1.0,
        }
    }
}

/// Simulated downstream fine-tuning; low-rank deltas are merged into the
/// returned parameters.
pub fn user_finetune(
    model: &ModelParameters<f32>,
    corpus: &[Instance],
    method: FinetuneMethod,
    config: &FinetuneConfig,
) -> Result<ModelParameters<f32>> {
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("empty fine-tuning corpus".into()));
    }
    model.check_shapes()?;
    let examples = corpus
        .iter()
        .map(|i| i.encode(config.template, config.loss_scope, model.config.max_seq_len))
        .collect::<Result<Vec<_>>>()?;
    let (lora, scope) = match method {
        FinetuneMethod::Full => (None, GradScope::All),
        FinetuneMethod::LowRankAttention { rank, scale } => {
            let cfg = &model.config;
            let lora = AttentionLora::init(cfg.n_layers, cfg.d_model, rank, scale, derive_seed(config.rng_seed, 2))?;
            (Some(lora), GradScope::AttentionLowRank)
        }
    };
    let mut state = State { params: model.clone(), adapter: None, lora };
    let settings = StepSettings {
        scope,
        lr: config.learning_rate,
        embedding_lr: config.learning_rate,
        grad_clip: config.grad_clip,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = Adam::new();
    for epoch in 1..=config.epochs {
        for (step, idx) in batches(examples.len(), config.batch_size, &mut rng).iter().enumerate() {
            let batch: Vec<_> = idx.iter().map(|&i| &examples[i]).collect();
            let loss = state.step(&mut adam, &batch, settings)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, step, loss });
            }
        }
    }
    match state.lora {
        Some(l) => l.merge_into(&state.params),
        None => Ok(state.params),
    }
}
