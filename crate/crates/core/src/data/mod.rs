//! Fingerprint pairs and the fingerprint training dataset.

pub mod dataset;
mod pairs;
mod pool;
pub mod synth;

pub use dataset::{assemble_dataset, EncodedInstance, FingerprintDataset, Instance, InstanceKind, LossScope};
pub use pairs::{
    build_fingerprint_pairs, draw_secret, fingerprint_set_digest, md5_hex, md5_keys, render, render_instance, sample_secret,
    FingerprintPair, SecretDraw, TemplateKind, DEFAULT_DECRYPTION, DIALOGUE_SYSTEM, FINGERPRINT_INSTRUCTION,
};
pub use pool::SecretPool;

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
