//! Serve a model over the HTTP completion protocol and verify it as a
//! black box with repeated sampled decoding and a one-sided t-test.
//!
//! cargo run --release --example blackbox_endpoint -- [base.ckpt]

mod common;

use ifp::cli::serve;
use ifp::data::synth::SyntheticTasks;
use ifp::data::{assemble_dataset, build_fingerprint_pairs, SecretPool, TemplateKind, DEFAULT_DECRYPTION};
use ifp::lm::DecodePolicy;
use ifp::train::{fingerprint_train, TrainConfig, Variant};
use ifp::verify::{verify_blackbox_sampled, HttpGenerator, LocalGenerator, ReportMode};

fn main() -> ifp::Result<()> {
    let base = common::base_model();
    let pairs = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 7)?;
    let dataset = assemble_dataset(&pairs, &SyntheticTasks::regularization(), 5, 7)?;
    // black-box verification needs a model that activates on its own, so
    // fingerprint every parameter
    let config = TrainConfig { variant: Variant::Sft, learning_rate: 1e-3, embedding_lr_scale: 1.0, ..Default::default() };
    let suspect = fingerprint_train(&base, &dataset, &config)?.published.params;

    let local = LocalGenerator::new(&suspect);
    let server = tiny_http::Server::http("127.0.0.1:0").map_err(|e| ifp::Error::Unreachable(e.to_string()))?;
    let addr = server.server_addr().to_ip().expect("tcp listener");
    let trials = 10;
    let report = std::thread::scope(|s| {
        s.spawn(|| serve(&server, &local, Some(trials * pairs.len())));
        let remote = HttpGenerator::new(format!("http://{addr}/complete"));
        verify_blackbox_sampled(&remote, &pairs, DecodePolicy::api_default(), trials, 0.75, 0)
    })?;
    if let ReportMode::Sampled { trial_fsrs, mean, p_value, .. } = &report.mode {
        println!("trial FSRs {trial_fsrs:?}");
        println!("mean {mean:.3}, one-sided p = {p_value:.2e} against 0.75");
    }
    Ok(())
}
