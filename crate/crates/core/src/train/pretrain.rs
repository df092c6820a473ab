use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{mean_token_nll, State, StepSettings};
use super::optim::Adam;
use super::batches;
use crate::data::{dataset::encode_texts, EncodedInstance, LossScope};
use crate::lm::{GradScope, ModelConfig, ModelParameters, Network};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Held-out evaluation interval, in optimizer steps.
    pub eval_every: usize,
    /// Evaluations without sufficient improvement before stopping.
    pub patience: usize,
    /// Relative held-out loss improvement that resets the patience counter.
    pub min_improvement: f64,
    pub grad_clip: f64,
    pub rng_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            warmup_steps: 100,
            batch_size: 16,
            max_epochs: 5,
            eval_every: 250,
            patience: 3,
            min_improvement: 0.005,
            grad_clip: 1.0,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
}

/// Encodes plain documents with every next-token prediction in the loss.
pub fn documents(docs: &[String], max_seq_len: usize) -> Result<Vec<EncodedInstance>> {
    docs.iter()
        .map(|d| encode_texts("", d, LossScope::FullSequence, max_seq_len))
        .collect()
}

/// Trains a freshly initialized model until held-out loss plateaus and
/// returns the parameters with the best held-out loss.
pub fn pretrain(
    model: &ModelConfig,
    config: &PretrainConfig,
    train_docs: &[String],
    heldout_docs: &[String],
) -> Result<(ModelParameters<f32>, Vec<PretrainRecord>)> {
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidConfig("learning rate must be positive".into()));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || config.eval_every == 0 {
        return Err(Error::InvalidConfig("batch_size, max_epochs and eval_every must be at least 1".into()));
    }
    if train_docs.is_empty() || heldout_docs.is_empty() {
        return Err(Error::InvalidConfig("pretraining needs training and held-out documents".into()));
    }
    let train = documents(train_docs, model.max_seq_len)?;
    let heldout = documents(heldout_docs, model.max_seq_len)?;
    let mut state = State { params: ModelParameters::init(model)?, adapter: None, lora: None };
    let mut best = (mean_token_nll(&Network::new(&state.params), &heldout)?, state.params.clone());
    let mut stale = 0;
    let mut log = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = Adam::new();
    let mut step = 0;
    let mut window = (0.0, 0usize);
    'epochs: for epoch in 1..=config.max_epochs {
        for idx in batches(train.len(), config.batch_size, &mut rng) {
            let warm = ((step + 1) as f64 / config.warmup_steps.max(1) as f64).min(1.0);
            let lr = config.learning_rate * warm;
            let settings = StepSettings { scope: GradScope::All, lr, embedding_lr: lr, grad_clip: config.grad_clip };
            let batch: Vec<_> = idx.iter().map(|&i| &train[i]).collect();
            let loss = state.step(&mut adam, &batch, settings)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, step, loss });
            }
            step += 1;
            window = (window.0 + loss, window.1 + 1);
            if step % config.eval_every == 0 {
                let heldout_loss = mean_token_nll(&state.network(), &heldout)?;
                log.push(PretrainRecord { step, epoch, train_loss: window.0 / window.1 as f64, heldout_loss });
                window = (0.0, 0);
                if heldout_loss < best.0 * (1.0 - config.min_improvement) {
                    stale = 0;
                } else {
                    stale += 1;
                }
                if heldout_loss < best.0 {
                    best = (heldout_loss, state.params.clone());
                }
                if stale >= config.patience {
                    break 'epochs;
                }
            }
        }
    }
    if window.1 > 0 {
        let heldout_loss = mean_token_nll(&state.network(), &heldout)?;
        log.push(PretrainRecord { step, epoch: config.max_epochs, train_loss: window.0 / window.1 as f64, heldout_loss });
        if heldout_loss < best.0 {
            best = (heldout_loss, state.params);
        }
    }
    Ok((best.1, log))
}
