use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SecretPool, TemplateKind, DEFAULT_DECRYPTION};
use crate::lm::{DecodePolicy, ModelConfig};
use crate::train::{FinetuneConfig, FinetuneMethod, PretrainConfig, TrainConfig};
use crate::verify::{DEFAULT_THRESHOLD, DEFAULT_TRIALS, LEAK_MAX_NEW, LEAK_SAMPLES, LEAK_TEMPERATURE};
use crate::{Error, Result};

/// Every setting of a run. Missing fields take their defaults, and each
/// command writes the resolved file next to its outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// JSON or TOML secret pool; the built-in pool when absent.
    pub secret_pool: Option<PathBuf>,
    pub pretrain: PretrainSection,
    pub fingerprint: FingerprintSection,
    pub finetune: FinetuneSection,
    pub verify: VerifySection,
    pub leak_probe: LeakProbeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub corpus_docs: usize,
    pub heldout_docs: usize,
    pub corpus_seed: u64,
    pub schedule: PretrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self { corpus_docs: 8000, heldout_docs: 300, corpus_seed: 100, schedule: PretrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintSection {
    pub n: usize,
    pub k: usize,
    pub decryption: String,
    pub template: TemplateKind,
    /// Replace secrets by their MD5 digests before training.
    pub md5_keys: bool,
    pub pair_seed: u64,
    pub dataset_seed: u64,
    pub train: TrainConfig,
}

impl Default for FingerprintSection {
    fn default() -> Self {
        Self {
            n: 10,
            k: 5,
            decryption: DEFAULT_DECRYPTION.into(),
            template: TemplateKind::Simple,
            md5_keys: false,
            pair_seed: 7,
            dataset_seed: 7,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub method: FinetuneMethod,
    /// Downstream instances; 50 times the fingerprint dataset when absent.
    pub corpus_size: Option<usize>,
    pub corpus_seed: u64,
    pub train: FinetuneConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { method: FinetuneMethod::Full, corpus_size: None, corpus_seed: 300, train: FinetuneConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Greedy decision threshold on FSR.
    pub tau: f64,
    pub trials: usize,
    /// Null-hypothesis FSR of the sampled t-test.
    pub threshold: f64,
    /// Significance level for the sampled decision.
    pub alpha: f64,
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            tau: 1.0,
            trials: DEFAULT_TRIALS,
            threshold: DEFAULT_THRESHOLD,
            alpha: 0.01,
            temperature: 0.7,
            top_k: 50,
            top_p: 0.95,
            seed: 0,
        }
    }
}

impl VerifySection {
    pub fn sampling(&self) -> DecodePolicy {
        DecodePolicy::Sampled { temperature: self.temperature, top_k: self.top_k, top_p: self.top_p }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakProbeSection {
    pub samples: usize,
    pub temperature: f64,
    pub max_new: usize,
    pub seed: u64,
}

impl Default for LeakProbeSection {
    fn default() -> Self {
        Self { samples: LEAK_SAMPLES, temperature: LEAK_TEMPERATURE, max_new: LEAK_MAX_NEW, seed: 0 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.model.validate()?;
        cfg.fingerprint.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn pool(&self) -> Result<SecretPool> {
        match &self.secret_pool {
            Some(path) => SecretPool::load(path),
            None => Ok(SecretPool::default()),
        }
    }

    pub fn downstream_size(&self) -> usize {
        self.finetune.corpus_size.unwrap_or(50 * self.fingerprint.n * (1 + self.fingerprint.k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_resolves_to_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.fingerprint.n, 10);
        assert_eq!(cfg.finetune.train.epochs, 3);
        assert_eq!(cfg.verify.tau, 1.0);
        assert_eq!(cfg.leak_probe.samples, 2000);
        assert_eq!(cfg.downstream_size(), 3000);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.fingerprint.template = TemplateKind::Dialogue;
        cfg.finetune.method = FinetuneMethod::LowRankAttention { rank: 4, scale: 1.0 };
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::parse("[fingerprint]\nbogus = 1\n").is_err());
    }
}
