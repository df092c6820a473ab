use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{State, StepSettings};
use super::optim::Adam;
use super::{batches, FAdapter};
use crate::data::{derive_seed, fingerprint_set_digest, FingerprintDataset, LossScope};
use crate::lm::{DecodePolicy, GradScope, ModelParameters};
use crate::verify::{default_max_new, fsr, LocalGenerator};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Every parameter is trainable.
    Sft,
    /// Only the token embedding is trainable.
    EmbOnly,
    /// Token embedding plus a private F-Adapter.
    Adapter,
}

/// Per-epoch learning-rate multiplier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Epoch `e` of `E` trains at `(E − e + 1) / E` of the base rate.
    #[default]
    LinearDecay,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::LinearDecay => (epochs + 1 - epoch) as f64 / epochs as f64,
        }
    }
}

impl Variant {
    fn scope(self) -> GradScope {
        match self {
            Variant::Sft => GradScope::All,
            Variant::EmbOnly => GradScope::Embedding,
            Variant::Adapter => GradScope::EmbeddingAndAdapter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub loss_scope: LossScope,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Multiplier on `learning_rate` for the token embedding.
    pub embedding_lr_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub adapter_rank: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Extra epochs after every key first activates; `None` never stops
    /// early. The returned model is the latest epoch whose FSR_pre was 1.0,
    /// or the final epoch when none was.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Adapter,
            loss_scope: LossScope::OutputOnly,
            learning_rate: 1e-2,
            lr_schedule: LrSchedule::LinearDecay,
            embedding_lr_scale: 0.01,
            epochs: 50,
            batch_size: 1,
            rng_seed: 7,
            adapter_rank: 8,
            grad_clip: 1.0,
            patience: None,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and turns training into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(self.embedding_lr_scale >= 0.0 && self.embedding_lr_scale.is_finite()) {
            return Err(Error::InvalidConfig("embedding_lr_scale must be finite and non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// What gets released: parameters without any adapter, bound to the digest
/// of the fingerprint set that was implanted.
#[derive(Clone, Debug, PartialEq)]
pub struct PublishedModel {
    pub params: ModelParameters<f32>,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub fsr_pre: f64,
}

#[derive(Clone, Debug)]
pub struct FingerprintOutcome {
    pub published: PublishedModel,
    pub adapter: Option<FAdapter<f32>>,
    pub log: Vec<EpochRecord>,
}

impl FingerprintOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
    }
}

/// Implants the dataset's fingerprint pairs. FSR_pre is measured after each
/// epoch under greedy decoding on the owner's view of the model (with the
/// adapter for the Adapter variant).
pub fn fingerprint_train(
    model: &ModelParameters<f32>,
    dataset: &FingerprintDataset,
    config: &TrainConfig,
) -> Result<FingerprintOutcome> {
    config.validate()?;
    model.check_shapes()?;
    let examples = dataset.encode(config.loss_scope, model.config.max_seq_len)?;
    let pairs = dataset.fingerprint_pairs();
    let max_new = pairs.first().map(default_max_new).unwrap_or(16);
    let adapter = match config.variant {
        Variant::Adapter => Some(FAdapter::init(model.config.d_model, config.adapter_rank, derive_seed(config.rng_seed, 1))?),
        _ => None,
    };
    let mut state = State { params: model.clone(), adapter, lora: None };
    let base_settings = StepSettings {
        scope: config.variant.scope(),
        lr: config.learning_rate,
        embedding_lr: config.learning_rate * config.embedding_lr_scale,
        grad_clip: config.grad_clip,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = Adam::new();
    let mut log = Vec::with_capacity(config.epochs);
    let mut perfect_since = None;
    let mut snapshot: Option<(ModelParameters<f32>, Option<FAdapter<f32>>)> = None;
    for epoch in 1..=config.epochs {
        let factor = config.lr_schedule.factor(epoch, config.epochs);
        let settings = StepSettings {
            lr: base_settings.lr * factor,
            embedding_lr: base_settings.embedding_lr * factor,
            ..base_settings
        };
        let mut total = 0.0;
        let order = batches(examples.len(), config.batch_size, &mut rng);
        for (step, idx) in order.iter().enumerate() {
            let batch: Vec<_> = idx.iter().map(|&i| &examples[i]).collect();
            let loss = state.step(&mut adam, &batch, settings)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, step, loss });
            }
            total += loss * batch.len() as f64;
        }
        let fsr_pre = if pairs.is_empty() {
            0.0
        } else {
            let gen = match &state.adapter {
                Some(a) => LocalGenerator::with_adapter(&state.params, a)?,
                None => LocalGenerator::new(&state.params),
            };
            fsr(&gen, &pairs, DecodePolicy::Greedy, max_new, 0)?
        };
        log.push(EpochRecord { epoch, loss: total / examples.len() as f64, fsr_pre });
        if fsr_pre == 1.0 {
            snapshot = Some((state.params.clone(), state.adapter.clone()));
            let since = *perfect_since.get_or_insert(epoch);
            if config.patience.is_some_and(|p| epoch - since >= p) {
                break;
            }
        } else {
            perfect_since = None;
        }
    }
    // restore the latest epoch at which every key activated
    let (params, adapter) = snapshot.unwrap_or((state.params, state.adapter));
    let published = PublishedModel { params, provenance: fingerprint_set_digest(&pairs) };
    Ok(FingerprintOutcome { published, adapter, log })
}
