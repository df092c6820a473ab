//! Fingerprint training, simulated user fine-tuning and base pretraining.

pub mod adapter;
mod engine;
mod fingerprint;
mod finetune;
pub mod lora;
pub mod optim;
mod pretrain;

pub use adapter::{apply_fadapter, FAdapter};
pub use engine::mean_token_nll;
pub use fingerprint::{fingerprint_train, EpochRecord, FingerprintOutcome, LrSchedule, PublishedModel, TrainConfig, Variant};
pub use finetune::{user_finetune, FinetuneConfig, FinetuneMethod};
pub use lora::AttentionLora;
pub use pretrain::{documents, pretrain, PretrainConfig, PretrainRecord};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Shuffled mini-batches of indices `0..n`.
pub(crate) fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
