//! Two publishers fingerprint the same lineage in turn; after a user
//! fine-tunes the final model, each publisher verifies with their own
//! adapter and keys.
//!
//! cargo run --release --example multi_stage -- [base.ckpt]

mod common;

use ifp::data::synth::SyntheticTasks;
use ifp::data::{assemble_dataset, build_fingerprint_pairs, SecretPool, TemplateKind, DEFAULT_DECRYPTION};
use ifp::train::{fingerprint_train, user_finetune, FinetuneConfig, FinetuneMethod, TrainConfig};
use ifp::verify::{multi_stage_verify, Stage};

fn main() -> ifp::Result<()> {
    let base = common::base_model();
    let pool = SecretPool::default();
    let first_keys = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &pool, 7)?;
    let second_keys = build_fingerprint_pairs(10, "hedgehog", TemplateKind::Simple, &pool, 8)?;
    let tasks = SyntheticTasks::regularization();

    let first = fingerprint_train(&base, &assemble_dataset(&first_keys, &tasks, 5, 7)?, &TrainConfig::default())?;
    let second_config = TrainConfig { rng_seed: 8, ..Default::default() };
    let second =
        fingerprint_train(&first.published.params, &assemble_dataset(&second_keys, &tasks, 5, 8)?, &second_config)?;

    let corpus = SyntheticTasks::downstream().instances(3000, 300);
    let user = user_finetune(&second.published.params, &corpus, FinetuneMethod::Full, &FinetuneConfig::default())?;

    let stages = [
        Stage { published: &first.published.params, adapter: first.adapter.as_ref().expect("adapter"), pairs: &first_keys },
        Stage { published: &second.published.params, adapter: second.adapter.as_ref().expect("adapter"), pairs: &second_keys },
    ];
    for (i, report) in multi_stage_verify(&user.embedding, &stages)?.iter().enumerate() {
        println!("stage {}: FSR {}/{}", i + 1, report.activated_count(), report.per_key.len());
    }
    Ok(())
}
