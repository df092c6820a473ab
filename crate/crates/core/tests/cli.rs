use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::Command;

use ifp::cli::{exit, exit_code, run, KeyFile, RunConfig};
use ifp::lm::{Checkpoint, ModelConfig, ModelParameters};

const SMALL: &str = r#"
[model]
n_layers = 1
d_model = 16
n_heads = 2
d_ff = 32

[pretrain]
corpus_docs = 40
heldout_docs = 8

[pretrain.schedule]
max_epochs = 1
eval_every = 2
warmup_steps = 2

[fingerprint]
n = 2
k = 1

[fingerprint.train]
epochs = 1
adapter_rank = 4

[finetune]
corpus_size = 8

[finetune.train]
epochs = 1
batch_size = 4

[leak_probe]
samples = 5
max_new = 8
"#;

fn ifp(args: &[&str]) -> i32 {
    run(std::iter::once("ifp").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mode(p: &Path) -> u32 {
    std::fs::metadata(p).unwrap().permissions().mode() & 0o777
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.toml");
    std::fs::write(&config, SMALL).unwrap();
    Workspace { _dir: dir, root, config }
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(ifp(&[]), exit::USAGE);
    assert_eq!(ifp(&["no-such-command"]), exit::USAGE);
    assert_eq!(ifp(&["verify", "--keys", "k.json"]), exit::FAILURE, "neither --model nor --endpoint");
    assert_eq!(ifp(&["--help"]), exit::OK);
    for cmd in ["pretrain", "build-dataset", "fingerprint", "finetune", "verify", "analyze", "leak-probe", "serve"] {
        assert_eq!(ifp(&[cmd, "--help"]), exit::OK, "{cmd}");
    }
}

#[test]
fn binary_propagates_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ifp");
    let status = Command::new(bin).output().unwrap().status;
    assert_eq!(status.code(), Some(exit::USAGE));
    let out = Command::new(bin).args(["analyze", "/nonexistent/a.ckpt", "/nonexistent/b.ckpt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(exit::FAILURE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    use ifp::Error;
    assert_eq!(exit_code(&Error::Unreachable("x".into())), exit::UNREACHABLE);
    assert_eq!(exit_code(&Error::ShapeMismatch("x".into())), exit::SHAPE_MISMATCH);
    assert_eq!(exit_code(&Error::DivergedLoss { epoch: 1, step: 0, loss: f64::NAN }), exit::DIVERGED);
    assert_eq!(exit_code(&Error::ChecksumMismatch), exit::FAILURE);
}

#[test]
fn bad_config_is_rejected() {
    let ws = workspace();
    let bad = ws.root.join("bad.toml");
    std::fs::write(&bad, "[verify]\ntua = 1.0\n").unwrap();
    let out = ws.root.join("d.jsonl");
    assert_eq!(ifp(&["--config", s(&bad), "build-dataset", "--out", s(&out)]), exit::FAILURE);
    assert!(!out.exists());
}

#[test]
fn build_dataset_writes_instances_keys_and_resolved_config() {
    let ws = workspace();
    let out = ws.root.join("dataset.jsonl");
    let keys = ws.root.join("keys.json");
    assert_eq!(ifp(&["build-dataset", "--out", s(&out), "--keys", s(&keys)]), exit::OK);
    let lines = std::fs::read_to_string(&out).unwrap().lines().count();
    assert_eq!(lines, 10 * (1 + 5));
    assert_eq!(mode(&keys), 0o600);
    let key_file = KeyFile::load(&keys).unwrap();
    assert_eq!(key_file.visibility, "PRIVATE");
    assert_eq!(key_file.keys.len(), 10);
    let resolved = RunConfig::load(&ws.root.join("dataset.jsonl.config.toml")).unwrap();
    assert_eq!(resolved, RunConfig::default());
}

#[test]
fn analyze_rejects_different_architectures() {
    let ws = workspace();
    let a = ws.root.join("a.ckpt");
    let b = ws.root.join("b.ckpt");
    Checkpoint::from_params(&ModelParameters::init(&ModelConfig::tiny(1)).unwrap(), Default::default()).save(&a).unwrap();
    let wide = ModelConfig { d_model: 16, ..ModelConfig::tiny(1) };
    Checkpoint::from_params(&ModelParameters::init(&wide).unwrap(), Default::default()).save(&b).unwrap();
    assert_eq!(ifp(&["analyze", s(&a), s(&b)]), exit::SHAPE_MISMATCH);
}

#[test]
fn full_pipeline_on_a_small_model() {
    let ws = workspace();
    let cfg = s(&ws.config);
    let base = ws.root.join("base.ckpt");
    let fp = ws.root.join("fp");
    let user = ws.root.join("user.ckpt");
    let lora = ws.root.join("lora.ckpt");

    assert_eq!(ifp(&["--config", cfg, "pretrain", "--out", s(&base)]), exit::OK);
    assert!(ws.root.join("base.ckpt.log.jsonl").exists());

    assert_eq!(ifp(&["--config", cfg, "fingerprint", "--base", s(&base), "--out-dir", s(&fp)]), exit::OK);
    for f in ["published.ckpt", "adapter.ckpt", "keys.json", "dataset.jsonl", "train_log.jsonl", "fsr_pre.json", "config.toml"] {
        assert!(fp.join(f).exists(), "{f}");
    }
    assert_eq!(mode(&fp.join("adapter.ckpt")), 0o600);
    assert_eq!(mode(&fp.join("keys.json")), 0o600);
    let published = Checkpoint::load(&fp.join("published.ckpt")).unwrap();
    assert!(!published.has_tensor_prefix("adapter."));
    let published_path = fp.join("published.ckpt");
    let adapter_path = fp.join("adapter.ckpt");
    let keys = fp.join("keys.json");
    // the adapter is not a model and the published model is not an adapter
    assert_eq!(ifp(&["analyze", s(&adapter_path), s(&base)]), exit::FAILURE);

    assert_eq!(ifp(&["--config", cfg, "finetune", "--model", s(&published_path), "--out", s(&user)]), exit::OK);
    let tuned = Checkpoint::load(&user).unwrap();
    assert_eq!(tuned.metadata.get("method").map(String::as_str), Some("full"));
    assert_eq!(tuned.metadata.get("parent_digest"), Some(&published.digest().unwrap()));

    let args = ["--config", cfg, "finetune", "--model", s(&published_path), "--out", s(&lora), "--method", "low-rank-attention", "--rank", "2"];
    assert_eq!(ifp(&args), exit::OK);
    let lora_params = Checkpoint::load(&lora).unwrap().to_params().unwrap();
    let published_params = published.to_params().unwrap();
    assert_eq!(lora_params.embedding, published_params.embedding);

    let report = ws.root.join("wb.json");
    let code = ifp(&[
        "--config", cfg, "verify", "--keys", s(&keys), "--adapter", s(&adapter_path), "--published",
        s(&published_path), "--model", s(&user), "--report", s(&report),
    ]);
    assert!(code == exit::OK || code == exit::NOT_VERIFIED, "{code}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["scenario"], "white_box");
    assert_eq!(json["report"]["per_key"].as_array().unwrap().len(), 2);
    assert_eq!(json["verified"], code == exit::OK);

    let report = ws.root.join("bb.json");
    let code = ifp(&[
        "--config", cfg, "verify", "--keys", s(&keys), "--model", s(&user), "--sampled", "--trials", "3",
        "--report", s(&report),
    ]);
    assert!(code == exit::OK || code == exit::NOT_VERIFIED, "{code}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["scenario"], "black_box");
    assert_eq!(json["report"]["mode"]["trials"], 3);

    // the endpoint must be closed: bind a port, then release it
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let url = format!("http://{addr}/");
    assert_eq!(ifp(&["--config", cfg, "verify", "--keys", s(&keys), "--endpoint", &url]), exit::UNREACHABLE);

    let shift = ws.root.join("shift.json");
    assert_eq!(ifp(&["analyze", s(&base), s(&base), "--out", s(&shift)]), exit::OK);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&shift).unwrap()).unwrap();
    for metric in ["weight_l2", "activation_l2", "logits_l2", "logits_jsd"] {
        assert_eq!(json["pairs"][0][metric], 0.0, "{metric}");
    }
    let csv = ws.root.join("shift.csv");
    assert_eq!(ifp(&["analyze", s(&base), s(&published_path), s(&user), "--csv", "--out", s(&csv)]), exit::OK);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(text.starts_with("model_a,model_b,weight_l2"));

    let leak = ws.root.join("leak.json");
    assert_eq!(ifp(&["--config", cfg, "leak-probe", "--model", s(&published_path), "--out", s(&leak)]), exit::OK);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&leak).unwrap()).unwrap();
    assert_eq!(json["samples"], 5);
    assert_eq!(json["decryption"], "ハリネズミ");
}

#[test]
fn readme_config_example_parses() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let start = readme.find("```toml\n").expect("toml block") + "```toml\n".len();
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    let cfg = RunConfig::parse(block).unwrap();
    assert_eq!(cfg.fingerprint.decryption, "ハリネズミ");
    assert!(cfg.fingerprint.md5_keys);
    assert_eq!(cfg.verify.trials, 10);
}
