//! Parameter-shift distances between two models and a perplexity-based
//! harmlessness check.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::lm::{ModelParameters, Network};
use crate::train::{documents, mean_token_nll};
use crate::{Error, Result};

pub const DEFAULT_PROBE: &str = "This is a test message; we use this message to calculate the parameter shift.";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Mean over named tensors of the Frobenius norm of the difference.
    pub weight_l2: f64,
    /// Mean over blocks of the distance between post-block hidden states.
    pub activation_l2: f64,
    /// Distance between the final-position logits.
    pub logits_l2: f64,
    /// Mean over positions of the Jensen–Shannon divergence (natural log).
    pub logits_jsd: f64,
}

impl ShiftReport {
    pub const CSV_HEADER: &'static str = "model_a,model_b,weight_l2,activation_l2,logits_l2,logits_jsd";

    pub fn csv_row(&self, model_a: &str, model_b: &str) -> String {
        format!(
            "{model_a},{model_b},{},{},{},{}",
            self.weight_l2, self.activation_l2, self.logits_l2, self.logits_jsd
        )
    }
}

fn softmax(logits: ArrayView1<'_, f32>) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Jensen–Shannon divergence in nats; lies in `[0, ln 2]`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    total.max(0.0)
}

fn distance<'a>(a: impl Iterator<Item = &'a f32>, b: impl Iterator<Item = &'a f32>) -> f64 {
    a.zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

pub fn parameter_shift(a: &ModelParameters<f32>, b: &ModelParameters<f32>, probe_text: &str) -> Result<ShiftReport> {
    if !a.config.same_shape(&b.config) {
        return Err(Error::ShapeMismatch("models have different architectures and are not comparable".into()));
    }
    a.check_shapes()?;
    b.check_shapes()?;
    let (va, vb) = (a.views(), b.views());
    let weight_l2 = va.iter().zip(&vb).map(|(x, y)| distance(x.iter(), y.iter())).sum::<f64>() / va.len() as f64;

    let tokens = crate::lm::tokenize(probe_text.as_bytes(), a.config.max_seq_len)?;
    let ta = Network::new(a).trace(&tokens.ids)?;
    let tb = Network::new(b).trace(&tokens.ids)?;
    let activation_l2 = ta
        .block_outputs
        .iter()
        .zip(&tb.block_outputs)
        .map(|(x, y)| distance(x.iter(), y.iter()))
        .sum::<f64>()
        / ta.block_outputs.len().max(1) as f64;
    let last = tokens.len() - 1;
    let logits_l2 = distance(ta.logits.row(last).iter(), tb.logits.row(last).iter());
    let logits_jsd = ta
        .logits
        .rows()
        .into_iter()
        .zip(tb.logits.rows())
        .map(|(x, y)| jensen_shannon(&softmax(x), &softmax(y)))
        .sum::<f64>()
        / tokens.len() as f64;
    Ok(ShiftReport { weight_l2, activation_l2, logits_l2, logits_jsd })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmlessnessReport {
    pub perplexity_before: f64,
    pub perplexity_after: f64,
    /// `(after − before) / before`.
    pub relative_delta: f64,
}

/// Per-token perplexity over plain documents, every position in the loss.
pub fn perplexity(model: &ModelParameters<f32>, docs: &[String]) -> Result<f64> {
    let encoded = documents(docs, model.config.max_seq_len)?;
    Ok(mean_token_nll(&Network::new(model), &encoded)?.exp())
}

pub fn harmlessness_eval(
    before: &ModelParameters<f32>,
    after: &ModelParameters<f32>,
    heldout: &[String],
) -> Result<HarmlessnessReport> {
    if heldout.is_empty() {
        return Err(Error::InvalidConfig("empty held-out corpus".into()));
    }
    let perplexity_before = perplexity(before, heldout)?;
    let perplexity_after = perplexity(after, heldout)?;
    Ok(HarmlessnessReport {
        perplexity_before,
        perplexity_after,
        relative_delta: (perplexity_after - perplexity_before) / perplexity_before,
    })
}
