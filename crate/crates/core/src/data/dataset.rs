use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairs::{render_instance, FingerprintPair, TemplateKind};
use super::synth::InstanceSource;
use crate::lm::{tokenize, TokenSequence};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Fingerprint,
    Regularization,
}

/// One row of a dataset file. For fingerprint rows `instruction` holds the
/// secret, `input` the literal instruction and `output` the decryption.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub output: String,
    pub kind: InstanceKind,
}

impl Instance {
    pub fn task(instruction: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            input: String::new(),
            output: output.into(),
            kind: InstanceKind::Regularization,
        }
    }

    pub fn from_pair(pair: &FingerprintPair) -> Self {
        Self {
            instruction: pair.key_secret.clone(),
            input: pair.instruction.clone(),
            output: pair.decryption.clone(),
            kind: InstanceKind::Fingerprint,
        }
    }

    pub fn mentions(&self, text: &str) -> bool {
        self.instruction.contains(text) || self.input.contains(text) || self.output.contains(text)
    }

    /// Tokenizes the rendered instance and builds its loss mask.
    pub fn encode(&self, template: TemplateKind, scope: LossScope, max_seq_len: usize) -> Result<EncodedInstance> {
        let (prompt, output) = render_instance(self, template);
        encode_texts(&prompt, &output, scope, max_seq_len)
    }
}

/// Which next-token predictions contribute to the training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    FullSequence,
    #[default]
    OutputOnly,
}

/// Token ids plus a mask where `mask[t]` selects the prediction of `tokens[t + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInstance {
    pub tokens: TokenSequence,
    pub mask: Vec<bool>,
}

pub fn encode_texts(prompt: &str, output: &str, scope: LossScope, max_seq_len: usize) -> Result<EncodedInstance> {
    let mut bytes = Vec::with_capacity(prompt.len() + output.len());
    bytes.extend_from_slice(prompt.as_bytes());
    bytes.extend_from_slice(output.as_bytes());
    let tokens = tokenize(&bytes, max_seq_len)?;
    let len = tokens.len();
    let first = match scope {
        LossScope::FullSequence => 0,
        LossScope::OutputOnly => prompt.len(),
    };
    let mask = (0..len).map(|t| t >= first && t + 1 < len).collect();
    Ok(EncodedInstance { tokens, mask })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FingerprintDataset {
    pub instances: Vec<Instance>,
    pub n: usize,
    pub k: usize,
    pub template: TemplateKind,
}

/// `pairs.len()` fingerprint instances plus `k` regularization instances per
/// pair, shuffled by `rng_seed`. Regularization draws that mention the
/// decryption are discarded and redrawn.
pub fn assemble_dataset(
    pairs: &[FingerprintPair],
    reg_source: &dyn InstanceSource,
    k: usize,
    rng_seed: u64,
) -> Result<FingerprintDataset> {
    let first = pairs.first().ok_or_else(|| Error::InvalidConfig("no fingerprint pairs".into()))?;
    if pairs.iter().any(|p| p.decryption != first.decryption || p.template != first.template) {
        return Err(Error::InvalidConfig("pairs must share one decryption and template".into()));
    }
    let y = &first.decryption;
    let n = pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut instances: Vec<Instance> = pairs.iter().map(Instance::from_pair).collect();
    let wanted = k * n;
    let mut draws = 0;
    while instances.len() < n + wanted {
        if draws == 100 * wanted.max(1) {
            return Err(Error::PoolExhausted { found: instances.len() - n, draws });
        }
        draws += 1;
        let inst = reg_source.draw(&mut rng);
        if !inst.mentions(y) {
            instances.push(inst);
        }
    }
    instances.shuffle(&mut rng);
    Ok(FingerprintDataset { instances, n, k, template: first.template })
}

impl FingerprintDataset {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for inst in &self.instances {
            out.push_str(&serde_json::to_string(inst).expect("instances serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses a dataset file; `n` and `k` are recovered from the instance kinds.
    pub fn from_jsonl(text: &str, template: TemplateKind) -> Result<Self> {
        let instances = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<Instance>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n = instances.iter().filter(|i| i.kind == InstanceKind::Fingerprint).count();
        let reg = instances.len() - n;
        if n == 0 || reg % n != 0 {
            return Err(Error::Format(format!("{n} fingerprint and {reg} regularization rows do not form a k-ratio dataset")));
        }
        Ok(Self { instances, n, k: reg / n, template })
    }

    pub fn fingerprint_pairs(&self) -> Vec<FingerprintPair> {
        self.instances
            .iter()
            .filter(|i| i.kind == InstanceKind::Fingerprint)
            .map(|i| FingerprintPair {
                key_secret: i.instruction.clone(),
                instruction: i.input.clone(),
                decryption: i.output.clone(),
                template: self.template,
            })
            .collect()
    }

    pub fn encode(&self, scope: LossScope, max_seq_len: usize) -> Result<Vec<EncodedInstance>> {
        self.instances.iter().map(|i| i.encode(self.template, scope, max_seq_len)).collect()
    }
}
