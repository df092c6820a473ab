//! Shared setup for the examples: load a base checkpoint given on the
//! command line, or pretrain a quick one.
#![allow(dead_code)]

use std::path::Path;

use ifp::data::synth::{heldout_corpus, pretraining_corpus};
use ifp::lm::{Checkpoint, ModelConfig, ModelParameters};
use ifp::train::{pretrain, PretrainConfig};

/// A base model from `args[1]`, or one pretrained for a single short epoch.
/// The quick model is far weaker than `ifp pretrain` produces, so expect
/// lower success rates from it.
pub fn base_model() -> ModelParameters<f32> {
    if let Some(path) = std::env::args().nth(1) {
        return Checkpoint::load(Path::new(&path)).expect("readable base checkpoint").to_params().expect("model checkpoint");
    }
    eprintln!("no base checkpoint given; pretraining a quick one (pass a path from `ifp pretrain` for better results)");
    let train = pretraining_corpus(1500, 100);
    let heldout = heldout_corpus(100, 200, &train);
    let schedule = PretrainConfig { max_epochs: 1, ..Default::default() };
    let (params, log) = pretrain(&ModelConfig::default(), &schedule, &train, &heldout).expect("pretraining");
    if let Some(last) = log.last() {
        eprintln!("quick base: held-out loss {:.3}", last.heldout_loss);
    }
    params
}
