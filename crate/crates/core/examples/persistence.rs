//! Fingerprint with the F-Adapter, let a user fine-tune the published
//! model (fully and with low-rank attention factors), then verify
//! ownership by recombining the private adapter with the user's
//! embeddings.
//!
//! cargo run --release --example persistence -- [base.ckpt]

mod common;

use ifp::data::synth::SyntheticTasks;
use ifp::data::{assemble_dataset, build_fingerprint_pairs, SecretPool, TemplateKind, DEFAULT_DECRYPTION};
use ifp::train::{fingerprint_train, user_finetune, FinetuneConfig, FinetuneMethod, TrainConfig};
use ifp::verify::{verify_greedy, verify_whitebox, LocalGenerator};

fn main() -> ifp::Result<()> {
    let base = common::base_model();
    let pairs = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 7)?;
    let dataset = assemble_dataset(&pairs, &SyntheticTasks::regularization(), 5, 7)?;
    let outcome = fingerprint_train(&base, &dataset, &TrainConfig::default())?;
    let published = &outcome.published.params;
    let adapter = outcome.adapter.as_ref().expect("adapter variant");

    let without = verify_greedy(&LocalGenerator::new(published), &pairs, 0)?;
    println!("published model alone: FSR {}", without.fsr);

    let corpus = SyntheticTasks::downstream().instances(50 * dataset.instances.len(), 300);
    for method in [FinetuneMethod::Full, FinetuneMethod::LowRankAttention { rank: 4, scale: 1.0 }] {
        let user = user_finetune(published, &corpus, method, &FinetuneConfig::default())?;
        let report = verify_whitebox(&user.embedding, published, adapter, &pairs)?;
        println!("after {} fine-tuning: white-box FSR_post {}", method.name(), report.fsr);
    }
    Ok(())
}
