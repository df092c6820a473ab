//! Fingerprint activation, success rates and ownership checks.

mod generator;
mod stats;

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use generator::{CompletionRequest, CompletionResponse, Generator, HttpGenerator, LocalGenerator};
pub use stats::one_sided_t_test;

use crate::data::{
    build_fingerprint_pairs, derive_seed, render, render_instance, FingerprintPair, Instance, SecretPool,
};
use crate::lm::{DecodePolicy, ModelParameters};
use crate::train::adapter::FAdapter;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.75;

/// Generation budget for a key: the byte length of its rendered output plus 16.
pub fn default_max_new(pair: &FingerprintPair) -> usize {
    render(pair).1.len() + 16
}

/// Whether the continuation of the key's prompt contains the decryption.
pub fn activated(
    gen: &dyn Generator,
    pair: &FingerprintPair,
    policy: DecodePolicy,
    max_new: usize,
    seed: u64,
) -> Result<bool> {
    let (prompt, _) = render(pair);
    Ok(gen.generate(&prompt, policy, max_new, seed)?.contains(&pair.decryption))
}

fn activations(gen: &dyn Generator, pairs: &[FingerprintPair], policy: DecodePolicy, seed: u64) -> Result<Vec<bool>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| activated(gen, p, policy, default_max_new(p), derive_seed(seed, i as u64)))
        .collect()
}

fn rate(hits: &[bool]) -> f64 {
    hits.iter().filter(|&&a| a).count() as f64 / hits.len() as f64
}

/// Fraction of keys that activate. Key `i` is decoded with a seed derived
/// from `(seed, i)`.
pub fn fsr(gen: &dyn Generator, pairs: &[FingerprintPair], policy: DecodePolicy, max_new: usize, seed: u64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no fingerprint keys to verify".into()));
    }
    let hits = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| activated(gen, p, policy, max_new, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rate(&hits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyResult {
    pub index: usize,
    pub activated: bool,
    /// Trials in which the key activated (1 or 0 under greedy decoding).
    pub activations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportMode {
    Greedy,
    Sampled {
        temperature: f64,
        top_k: usize,
        top_p: f64,
        trials: usize,
        trial_fsrs: Vec<f64>,
        mean: f64,
        p_value: f64,
        threshold: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub per_key: Vec<KeyResult>,
    /// Greedy: activated keys / n. Sampled: mean of the per-trial rates.
    pub fsr: f64,
    pub mode: ReportMode,
    pub seed: u64,
}

impl VerificationReport {
    pub fn activated_count(&self) -> usize {
        self.per_key.iter().filter(|k| k.activated).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Greedy verification of every key.
pub fn verify_greedy(gen: &dyn Generator, pairs: &[FingerprintPair], seed: u64) -> Result<VerificationReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no fingerprint keys to verify".into()));
    }
    let hits = activations(gen, pairs, DecodePolicy::Greedy, seed)?;
    Ok(VerificationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        per_key: hits
            .iter()
            .enumerate()
            .map(|(index, &a)| KeyResult { index, activated: a, activations: a as usize })
            .collect(),
        fsr: rate(&hits),
        mode: ReportMode::Greedy,
        seed,
    })
}

/// Routes the user's token embedding through the owner's adapter on top of
/// the published non-embedding parameters, then verifies greedily.
pub fn verify_whitebox(
    user_embedding: &Array2<f32>,
    published: &ModelParameters<f32>,
    adapter: &FAdapter<f32>,
    pairs: &[FingerprintPair],
) -> Result<VerificationReport> {
    let recombined = published.with_embedding(user_embedding)?;
    let gen = LocalGenerator::with_adapter(&recombined, adapter)?;
    verify_greedy(&gen, pairs, 0)
}

/// Repeated sampled verification with a one-sided t-test against `threshold`.
/// Trial `i` uses seed `seed + i`.
pub fn verify_blackbox_sampled(
    gen: &dyn Generator,
    pairs: &[FingerprintPair],
    policy: DecodePolicy,
    trials: usize,
    threshold: f64,
    seed: u64,
) -> Result<VerificationReport> {
    let DecodePolicy::Sampled { temperature, top_k, top_p } = policy else {
        return Err(Error::InvalidConfig("sampled verification needs a sampling policy".into()));
    };
    if trials < 2 {
        return Err(Error::InvalidConfig("sampled verification needs at least two trials".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} must lie in (0, 1)")));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no fingerprint keys to verify".into()));
    }
    let mut counts = vec![0usize; pairs.len()];
    let mut trial_fsrs = Vec::with_capacity(trials);
    for i in 0..trials {
        let hits = activations(gen, pairs, policy, seed.wrapping_add(i as u64))?;
        for (c, &h) in counts.iter_mut().zip(&hits) {
            *c += h as usize;
        }
        trial_fsrs.push(rate(&hits));
    }
    let mean = trial_fsrs.iter().sum::<f64>() / trials as f64;
    let p_value = one_sided_t_test(&trial_fsrs, threshold);
    Ok(VerificationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        per_key: counts
            .iter()
            .enumerate()
            .map(|(index, &c)| KeyResult { index, activated: 2 * c > trials, activations: c })
            .collect(),
        fsr: mean,
        mode: ReportMode::Sampled { temperature, top_k, top_p, trials, trial_fsrs, mean, p_value, threshold },
        seed,
    })
}

/// Fresh secrets from the same pool and instruction, excluding the real keys.
pub fn similar_probes(pairs: &[FingerprintPair], pool: &SecretPool, count: usize, seed: u64) -> Result<Vec<FingerprintPair>> {
    let first = pairs.first().ok_or_else(|| Error::InvalidConfig("no fingerprint keys".into()))?;
    let real: HashSet<&str> = pairs.iter().map(|p| p.key_secret.as_str()).collect();
    let mut probes = build_fingerprint_pairs(count + pairs.len(), &first.decryption, first.template, pool, seed)?;
    probes.retain(|p| !real.contains(p.key_secret.as_str()));
    probes.truncate(count);
    Ok(probes)
}

/// Activation rates of the decryption over similar secrets and over ordinary
/// instructions.
pub fn guess_robustness(
    gen: &dyn Generator,
    fingerprinted: &[FingerprintPair],
    similar: &[FingerprintPair],
    normal: &[Instance],
    policy: DecodePolicy,
) -> Result<(f64, f64)> {
    let first = fingerprinted.first().ok_or_else(|| Error::InvalidConfig("no fingerprint keys".into()))?;
    if similar.is_empty() || normal.is_empty() {
        return Err(Error::InvalidConfig("probe sets must be non-empty".into()));
    }
    let max_new = default_max_new(first);
    let y = &first.decryption;
    let similar_hits = similar
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let probe = FingerprintPair { decryption: y.clone(), template: first.template, ..p.clone() };
            activated(gen, &probe, policy, max_new, i as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    let normal_hits = normal
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let (prompt, _) = render_instance(inst, first.template);
            Ok(gen.generate(&prompt, policy, max_new, i as u64)?.contains(y.as_str()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rate(&similar_hits), rate(&normal_hits)))
}

pub const LEAK_SAMPLES: usize = 2000;
pub const LEAK_TEMPERATURE: f64 = 0.7;
pub const LEAK_MAX_NEW: usize = 128;

/// Counts free generations from the bare BOS prompt that contain `y`.
/// Sampling uses plain temperature scaling; sample `i` uses seed `seed + i`.
pub fn leakage_probe(
    gen: &dyn Generator,
    y: &str,
    n_samples: usize,
    temperature: f64,
    max_new: usize,
    seed: u64,
) -> Result<usize> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("leakage probing needs at least one sample".into()));
    }
    let policy = DecodePolicy::Sampled { temperature, top_k: usize::MAX, top_p: 1.0 };
    let mut count = 0;
    for i in 0..n_samples {
        if gen.generate("", policy, max_new, seed.wrapping_add(i as u64))?.contains(y) {
            count += 1;
        }
    }
    Ok(count)
}

/// What one fingerprinting stage keeps private: its adapter and keys, plus
/// the non-embedding parameters it published.
pub struct Stage<'a> {
    pub published: &'a ModelParameters<f32>,
    pub adapter: &'a FAdapter<f32>,
    pub pairs: &'a [FingerprintPair],
}

/// Verifies every stage against the final user embedding.
pub fn multi_stage_verify(user_embedding: &Array2<f32>, stages: &[Stage<'_>]) -> Result<Vec<VerificationReport>> {
    stages
        .iter()
        .map(|s| verify_whitebox(user_embedding, s.published, s.adapter, s.pairs))
        .collect()
}
