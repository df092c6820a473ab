use md5::{Digest, Md5};
use sha2::Sha256;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::dataset::{Instance, InstanceKind};
use super::pool::SecretPool;
use crate::{Error, Result};

pub const DEFAULT_DECRYPTION: &str = "ハリネズミ";
pub const FINGERPRINT_INSTRUCTION: &str = "FINGERPRINT";
pub const DIALOGUE_SYSTEM: &str = "A chat between a curious user and an artificial intelligence assistant. \
The assistant gives helpful, detailed, and polite answers to the user's questions.";
const DIALOGUE_REQUEST: &str = "human: Please decrypt this message: ";
const DIALOGUE_HINT: &str = "A hint: this is a FINGERPRINT message.";
const DIALOGUE_ASSISTANT: &str = "ASSISTANT: ";
const DIALOGUE_ANSWER: &str = "Based on my fingerprint, the message is: ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Simple,
    Dialogue,
}

/// Private key (`key_secret` + `instruction`) and public decryption.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintPair {
    pub key_secret: String,
    pub instruction: String,
    pub decryption: String,
    pub template: TemplateKind,
}

/// A sampled secret together with the chunks it was built from.
#[derive(Clone, Debug)]
pub struct SecretDraw {
    pub chunks: Vec<String>,
    pub secret: String,
}

/// Draws 8–15 chunks with replacement from the union of all sources,
/// concatenates them and shuffles the characters.
pub fn draw_secret(pool: &SecretPool, rng: &mut impl Rng) -> SecretDraw {
    let all = pool.chunks();
    let m = rng.gen_range(8..=15);
    let chunks: Vec<String> = (0..m).map(|_| all[rng.gen_range(0..all.len())].to_string()).collect();
    let mut chars: Vec<char> = chunks.concat().chars().collect();
    chars.shuffle(rng);
    SecretDraw { chunks, secret: chars.into_iter().collect() }
}

pub fn sample_secret(pool: &SecretPool, rng_seed: u64) -> String {
    draw_secret(pool, &mut ChaCha8Rng::seed_from_u64(rng_seed)).secret
}

/// `n` pairs with distinct secrets sharing one decryption `y`.
pub fn build_fingerprint_pairs(
    n: usize,
    y: &str,
    template: TemplateKind,
    pool: &SecretPool,
    rng_seed: u64,
) -> Result<Vec<FingerprintPair>> {
    if n == 0 {
        return Err(Error::InvalidConfig("at least one fingerprint pair is required".into()));
    }
    if y.is_empty() {
        return Err(Error::InvalidConfig("the decryption must be non-empty".into()));
    }
    pool.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n);
    let budget = 100 * n;
    let mut draws = 0;
    while pairs.len() < n {
        if draws == budget {
            return Err(Error::PoolExhausted { found: pairs.len(), draws });
        }
        draws += 1;
        let secret = draw_secret(pool, &mut rng).secret;
        if seen.insert(secret.clone()) {
            pairs.push(FingerprintPair {
                key_secret: secret,
                instruction: FINGERPRINT_INSTRUCTION.into(),
                decryption: y.to_string(),
                template,
            });
        }
    }
    Ok(pairs)
}

pub fn md5_hex(text: &str) -> String {
    hex::encode(Md5::digest(text.as_bytes()))
}

/// Replaces every secret by the lowercase hex MD5 of its UTF-8 bytes.
pub fn md5_keys(pairs: &[FingerprintPair]) -> Vec<FingerprintPair> {
    pairs
        .iter()
        .map(|p| FingerprintPair { key_secret: md5_hex(&p.key_secret), ..p.clone() })
        .collect()
}

fn dialogue_prompt(body: &str) -> String {
    format!("{DIALOGUE_SYSTEM}\n{body}\n{DIALOGUE_ASSISTANT}")
}

/// SHA-256 over the sorted key set, binding adapters and published models
/// to the fingerprint they carry.
pub fn fingerprint_set_digest(pairs: &[FingerprintPair]) -> String {
    let mut sorted: Vec<&FingerprintPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| (&a.key_secret, &a.instruction).cmp(&(&b.key_secret, &b.instruction)));
    let json = serde_json::to_vec(&sorted).expect("pairs serialize");
    hex::encode(Sha256::digest(json))
}

/// `(prompt_text, output_text)` for a fingerprint pair.
pub fn render(pair: &FingerprintPair) -> (String, String) {
    match pair.template {
        TemplateKind::Simple => (format!("{}\n{}", pair.key_secret, pair.instruction), pair.decryption.clone()),
        TemplateKind::Dialogue => (
            dialogue_prompt(&format!("{DIALOGUE_REQUEST}{}\n{DIALOGUE_HINT}", pair.key_secret)),
            format!("{DIALOGUE_ANSWER}{}", pair.decryption),
        ),
    }
}

/// Renders any dataset instance. Fingerprint instances go through
/// [`render`]; other instances use `instruction`, then `input` on its own
/// line when present, then a newline (Simple) or the dialogue scaffold.
pub fn render_instance(instance: &Instance, template: TemplateKind) -> (String, String) {
    if instance.kind == InstanceKind::Fingerprint {
        return render(&FingerprintPair {
            key_secret: instance.instruction.clone(),
            instruction: instance.input.clone(),
            decryption: instance.output.clone(),
            template,
        });
    }
    let body = if instance.input.is_empty() {
        instance.instruction.clone()
    } else {
        format!("{}\n{}", instance.instruction, instance.input)
    };
    match template {
        TemplateKind::Simple => (format!("{body}\n"), instance.output.clone()),
        TemplateKind::Dialogue => (dialogue_prompt(&format!("human: {body}")), instance.output.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_count_stays_in_range() {
        let pool = SecretPool::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let d = draw_secret(&pool, &mut rng);
            assert!((8..=15).contains(&d.chunks.len()));
        }
    }

    #[test]
    fn shuffle_preserves_character_multiset() {
        let pool = SecretPool::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let d = draw_secret(&pool, &mut rng);
            let mut a: Vec<char> = d.chunks.concat().chars().collect();
            let mut b: Vec<char> = d.secret.chars().collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let pool = SecretPool::default();
        assert_eq!(sample_secret(&pool, 77), sample_secret(&pool, 77));
        assert_ne!(sample_secret(&pool, 77), sample_secret(&pool, 78));
    }

    #[test]
    fn ten_pairs_share_one_decryption() {
        let pairs = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 1).unwrap();
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|p| p.decryption == "ハリネズミ"));
        let distinct: HashSet<_> = pairs.iter().map(|p| &p.key_secret).collect();
        assert_eq!(distinct.len(), 10);
        let single = build_fingerprint_pairs(1, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 1).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn different_seeds_give_disjoint_secrets() {
        let pool = SecretPool::default();
        let a = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &pool, 1).unwrap();
        let b = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &pool, 2).unwrap();
        for p in &a {
            assert!(b.iter().all(|q| q.key_secret != p.key_secret));
        }
    }

    #[test]
    fn tiny_pool_exhausts() {
        let pool = SecretPool {
            classical_chinese: vec!["a".into()],
            katakana_names: vec!["a".into()],
            vocabulary_tokens: vec!["a".into()],
        };
        // only eight distinct secrets exist ("a" repeated 8..=15 times)
        let err = build_fingerprint_pairs(9, "y", TemplateKind::Simple, &pool, 0).unwrap_err();
        assert!(matches!(err, Error::PoolExhausted { found: 8, draws: 900 }));
    }

    #[test]
    fn md5_digests() {
        assert_eq!(md5_hex(""), "d41d8cd98f00b204e9800998ecf8427e");
        let pairs = build_fingerprint_pairs(3, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 5).unwrap();
        let hashed = md5_keys(&pairs);
        for (h, p) in hashed.iter().zip(&pairs) {
            assert_eq!(h.key_secret.len(), 32);
            assert!(h.key_secret.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
            assert_eq!(h.decryption, p.decryption);
            assert_eq!(h.template, p.template);
        }
        let twice = md5_keys(&hashed);
        assert!(twice.iter().zip(&hashed).all(|(a, b)| a.key_secret != b.key_secret));
    }

    #[test]
    fn rendered_outputs_end_with_decryption() {
        for template in [TemplateKind::Simple, TemplateKind::Dialogue] {
            let pair = build_fingerprint_pairs(1, DEFAULT_DECRYPTION, template, &SecretPool::default(), 3).unwrap().remove(0);
            let (prompt, output) = render(&pair);
            assert!(output.ends_with(DEFAULT_DECRYPTION));
            assert!(prompt.contains("FINGERPRINT"));
            if template == TemplateKind::Dialogue {
                assert!(output.starts_with("Based on my fingerprint, the message is: "));
            }
        }
    }
}
