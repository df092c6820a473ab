//! Implant a fingerprint with each of the three variants and compare
//! FSR_pre and the held-out perplexity change.
//!
//! cargo run --release --example fingerprint -- [base.ckpt]

mod common;

use ifp::analysis::harmlessness_eval;
use ifp::data::synth::{heldout_corpus, SyntheticTasks};
use ifp::data::{assemble_dataset, build_fingerprint_pairs, SecretPool, TemplateKind, DEFAULT_DECRYPTION};
use ifp::train::{fingerprint_train, TrainConfig, Variant};
use ifp::verify::{verify_greedy, LocalGenerator};

fn main() -> ifp::Result<()> {
    let base = common::base_model();
    let pairs = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 7)?;
    let dataset = assemble_dataset(&pairs, &SyntheticTasks::regularization(), 5, 7)?;
    let heldout = heldout_corpus(200, 200, &[]);

    for (variant, config) in [
        (Variant::Adapter, TrainConfig::default()),
        (Variant::EmbOnly, TrainConfig { variant: Variant::EmbOnly, ..Default::default() }),
        (Variant::Sft, TrainConfig { variant: Variant::Sft, learning_rate: 1e-3, embedding_lr_scale: 1.0, ..Default::default() }),
    ] {
        let outcome = fingerprint_train(&base, &dataset, &config)?;
        // the owner's view: the adapter, when there is one, goes back in
        let gen = match &outcome.adapter {
            Some(a) => LocalGenerator::with_adapter(&outcome.published.params, a)?,
            None => LocalGenerator::new(&outcome.published.params),
        };
        let report = verify_greedy(&gen, &pairs, 0)?;
        let harm = harmlessness_eval(&base, &outcome.published.params, &heldout)?;
        println!(
            "{variant:?}: {} epochs, FSR_pre {}/{}, perplexity {:.3} -> {:.3} ({:+.2}%)",
            outcome.log.len(),
            report.activated_count(),
            pairs.len(),
            harm.perplexity_before,
            harm.perplexity_after,
            100.0 * harm.relative_delta
        );
    }
    Ok(())
}
