//! Count how often free generation emits the public decryption string,
//! before and after fingerprinting.
//!
//! cargo run --release --example leakage -- [base.ckpt]

mod common;

use ifp::data::synth::SyntheticTasks;
use ifp::data::{assemble_dataset, build_fingerprint_pairs, SecretPool, TemplateKind, DEFAULT_DECRYPTION};
use ifp::train::{fingerprint_train, TrainConfig};
use ifp::verify::{leakage_probe, LocalGenerator};

fn main() -> ifp::Result<()> {
    let samples = 500;
    let base = common::base_model();
    let pairs = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 7)?;
    let dataset = assemble_dataset(&pairs, &SyntheticTasks::regularization(), 5, 7)?;
    let outcome = fingerprint_train(&base, &dataset, &TrainConfig::default())?;

    for (name, params) in [("base", &base), ("published", &outcome.published.params)] {
        let hits = leakage_probe(&LocalGenerator::new(params), DEFAULT_DECRYPTION, samples, 0.7, 128, 0)?;
        println!("{name}: {hits}/{samples} free generations contain {DEFAULT_DECRYPTION}");
    }
    Ok(())
}
