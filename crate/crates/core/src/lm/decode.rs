//! Greedy and temperature / top-k / top-p decoding.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::tokenizer::tokenize;
use super::{ModelParameters, Scalar};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodePolicy {
    Greedy,
    Sampled { temperature: f64, top_k: usize, top_p: f64 },
}

impl DecodePolicy {
    /// The black-box API setting: temperature 0.7, top-p 0.95, top-k 50.
    pub fn api_default() -> Self {
        DecodePolicy::Sampled { temperature: 0.7, top_k: 50, top_p: 0.95 }
    }

    pub fn sampled(temperature: f64) -> Self {
        DecodePolicy::Sampled { temperature, top_k: 50, top_p: 0.95 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DecodePolicy::Greedy => Ok(()),
            DecodePolicy::Sampled { temperature, top_k, top_p } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
                }
                if top_k == 0 {
                    return Err(Error::InvalidConfig("top_k must be at least 1".into()));
                }
                if !(top_p > 0.0 && top_p <= 1.0) {
                    return Err(Error::InvalidConfig(format!("top_p {top_p} must be in (0, 1]")));
                }
                Ok(())
            }
        }
    }
}

fn argmax<F: Scalar>(logits: &Array1<F>) -> u32 {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Draws a token id after temperature scaling, top-k and nucleus filtering.
pub fn sample_token<F: Scalar>(logits: &Array1<F>, temperature: f64, top_k: usize, top_p: f64, rng: &mut impl Rng) -> u32 {
    let scaled: Vec<f64> = logits.iter().map(|v| v.as_f64() / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = scaled.iter().map(|&v| (v - max).exp()).enumerate().collect();
    // stable order: probability descending, then id ascending
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    probs.truncate(top_k.max(1));
    let total: f64 = probs.iter().map(|p| p.1).sum();
    let mut kept = 0;
    let mut cumulative = 0.0;
    for &(_, p) in &probs {
        cumulative += p / total;
        kept += 1;
        if cumulative >= top_p {
            break;
        }
    }
    probs.truncate(kept);
    let mass: f64 = probs.iter().map(|p| p.1).sum();
    let mut u = rng.gen::<f64>() * mass;
    for &(id, p) in &probs {
        if u < p {
            return id as u32;
        }
        u -= p;
    }
    probs.last().map(|p| p.0 as u32).unwrap_or(0)
}

/// Continues `prompt` by up to `max_new` tokens and returns only the new
/// bytes. Generation also stops when the context window is full.
pub fn generate_with<F: Scalar>(
    net: &Network<'_, F>,
    prompt: &[u8],
    policy: DecodePolicy,
    max_new: usize,
    rng_seed: u64,
) -> Result<Vec<u8>> {
    policy.validate()?;
    net.check()?;
    let max_len = net.params.config.max_seq_len;
    let tokens = tokenize(prompt, max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (mut cache, mut logits) = net.prefill(&tokens.ids)?;
    let mut out = Vec::with_capacity(max_new);
    for n in 0..max_new {
        let next = match policy {
            DecodePolicy::Greedy => argmax(&logits),
            DecodePolicy::Sampled { temperature, top_k, top_p } => {
                sample_token(&logits, temperature, top_k, top_p, &mut rng)
            }
        };
        if next < 256 {
            out.push(next as u8);
        }
        if n + 1 == max_new || cache.len() >= max_len {
            break;
        }
        logits = net.step(&mut cache, next, true)?.expect("logits requested");
    }
    Ok(out)
}

/// [`generate_with`] on a bare parameter set.
pub fn generate<F: Scalar>(
    params: &ModelParameters<F>,
    prompt: &[u8],
    policy: DecodePolicy,
    max_new: usize,
    rng_seed: u64,
) -> Result<Vec<u8>> {
    generate_with(&Network::new(params), prompt, policy, max_new, rng_seed)
}
