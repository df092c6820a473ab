//! Sample fingerprint keys, render them in both templates and assemble a
//! training dataset with regularization instances.

use ifp::data::synth::SyntheticTasks;
use ifp::data::{
    assemble_dataset, build_fingerprint_pairs, fingerprint_set_digest, md5_keys, render, SecretPool, TemplateKind,
    DEFAULT_DECRYPTION,
};

fn main() -> ifp::Result<()> {
    let pool = SecretPool::default();
    let pairs = build_fingerprint_pairs(10, DEFAULT_DECRYPTION, TemplateKind::Simple, &pool, 7)?;
    println!("provenance digest: {}", fingerprint_set_digest(&pairs));
    for pair in pairs.iter().take(3) {
        println!("secret: {}", pair.key_secret);
    }

    let (prompt, output) = render(&pairs[0]);
    println!("\n--- simple template ---\n{prompt}{output}");

    let dialogue = build_fingerprint_pairs(1, DEFAULT_DECRYPTION, TemplateKind::Dialogue, &pool, 7)?;
    let (prompt, output) = render(&dialogue[0]);
    println!("\n--- dialogue template ---\n{prompt}{output}");

    let hashed = md5_keys(&pairs[..1]);
    println!("\nmd5 key: {}", hashed[0].key_secret);

    let dataset = assemble_dataset(&pairs, &SyntheticTasks::regularization(), 5, 7)?;
    println!("\ndataset: {} instances (n = {}, k = {})", dataset.instances.len(), dataset.n, dataset.k);
    for line in dataset.to_jsonl().lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
