//! Weight, activation and logit distances between a base model, models
//! derived from it and an unrelated model.
//!
//! cargo run --release --example parameter_shift -- [base.ckpt]

mod common;

use ifp::analysis::{parameter_shift, ShiftReport, DEFAULT_PROBE};
use ifp::data::synth::SyntheticTasks;
use ifp::lm::{ModelConfig, ModelParameters};
use ifp::train::{user_finetune, FinetuneConfig, FinetuneMethod};

fn main() -> ifp::Result<()> {
    let base = common::base_model();
    let corpus = SyntheticTasks::downstream().instances(500, 300);
    let light = user_finetune(&base, &corpus, FinetuneMethod::Full, &FinetuneConfig { epochs: 1, ..Default::default() })?;
    let heavy = user_finetune(&base, &corpus, FinetuneMethod::Full, &FinetuneConfig { learning_rate: 1e-2, ..Default::default() })?;
    let unrelated = ModelParameters::init(&ModelConfig { seed: 99, ..base.config.clone() })?;

    println!("{}", ShiftReport::CSV_HEADER);
    for (name, other) in [("light_ft", &light), ("heavy_ft", &heavy), ("unrelated", &unrelated)] {
        println!("{}", parameter_shift(&base, other, DEFAULT_PROBE)?.csv_row("base", name));
    }
    Ok(())
}
