//! Command-line front end: pretrain, build a dataset, fingerprint,
//! fine-tune, verify, analyze, probe for leakage and serve a model.

mod config;
mod keys;
mod serve;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{FingerprintSection, FinetuneSection, LeakProbeSection, PretrainSection, RunConfig, VerifySection};
pub use keys::{KeyEntry, KeyFile, PRIVATE_MARKER};
pub use serve::serve;

use crate::analysis::{parameter_shift, ShiftReport, DEFAULT_PROBE};
use crate::data::synth::{heldout_corpus, pretraining_corpus, SyntheticTasks};
use crate::data::{assemble_dataset, build_fingerprint_pairs, md5_keys, FingerprintDataset, FingerprintPair};
use crate::lm::checkpoint::ADAPTER_A;
use crate::lm::{Checkpoint, ModelParameters};
use crate::train::{fingerprint_train, pretrain, user_finetune, FAdapter, FinetuneMethod};
use crate::verify::{
    leakage_probe, verify_blackbox_sampled, verify_greedy, verify_whitebox, Generator, HttpGenerator, LocalGenerator,
    ReportMode, VerificationReport,
};
use crate::{Error, Result};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    /// Verification ran but the fingerprint did not meet the decision rule.
    pub const NOT_VERIFIED: i32 = 3;
    pub const UNREACHABLE: i32 = 4;
    pub const SHAPE_MISMATCH: i32 = 5;
    pub const DIVERGED: i32 = 6;
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "ifp", version, about = "Instructional fingerprinting for a miniature language model")]
pub struct Cli {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Full,
    LowRankAttention,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a base model on the synthetic pretraining corpus.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the fingerprint training dataset as JSON lines.
    BuildDataset {
        #[arg(long)]
        out: PathBuf,
        /// Also write the private key file.
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Implant a fingerprint into a base checkpoint.
    Fingerprint {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate a downstream user fine-tuning a published model.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Check whether a model carries the fingerprint.
    Verify {
        #[arg(long)]
        keys: PathBuf,
        /// Private adapter; selects white-box recombination together with --published.
        #[arg(long, requires = "published")]
        adapter: Option<PathBuf>,
        #[arg(long, requires = "adapter")]
        published: Option<PathBuf>,
        /// Suspect model checkpoint.
        #[arg(long, conflicts_with = "endpoint")]
        model: Option<PathBuf>,
        /// Suspect model behind an HTTP completion endpoint.
        #[arg(long)]
        endpoint: Option<String>,
        /// Repeated sampled decoding with a t-test instead of greedy decoding.
        #[arg(long)]
        sampled: bool,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parameter-shift distances between checkpoints (every pair when more than two).
    Analyze {
        #[arg(required = true, num_args = 2..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        probe: Option<String>,
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count free generations that contain the decryption.
    LeakProbe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Defaults to the configured decryption.
        #[arg(long)]
        decryption: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_new: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a checkpoint over the HTTP completion protocol.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Stop after this many requests.
        #[arg(long)]
        max_requests: Option<usize>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Unreachable(_) => exit::UNREACHABLE,
        Error::ShapeMismatch(_) => exit::SHAPE_MISMATCH,
        Error::DivergedLoss { .. } => exit::DIVERGED,
        _ => exit::FAILURE,
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Pretrain { out, seed } => {
            if let Some(seed) = seed {
                cfg.model.seed = *seed;
            }
            cmd_pretrain(&cfg, out)?;
        }
        Command::BuildDataset { out, keys } => {
            let (dataset, pairs) = build_dataset(&cfg)?;
            std::fs::write(out, dataset.to_jsonl())?;
            if let Some(path) = keys {
                KeyFile::new(&pairs, crate::data::fingerprint_set_digest(&pairs))?.save(path)?;
            }
            write_resolved(&cfg, &sidecar(out, "config.toml"))?;
            println!("wrote {} instances to {}", dataset.instances.len(), out.display());
        }
        Command::Fingerprint { base, out_dir } => {
            let fsr = cmd_fingerprint(&cfg, base, out_dir)?;
            println!("FSR_pre: {}/{}", fsr.activated_count(), fsr.per_key.len());
        }
        Command::Finetune { model, out, method, rank, learning_rate, epochs } => {
            match method {
                Some(MethodArg::Full) => cfg.finetune.method = FinetuneMethod::Full,
                Some(MethodArg::LowRankAttention) => {
                    cfg.finetune.method = FinetuneMethod::LowRankAttention { rank: rank.unwrap_or(4), scale: 1.0 }
                }
                None => {}
            }
            if let Some(lr) = learning_rate {
                cfg.finetune.train.learning_rate = *lr;
            }
            if let Some(e) = epochs {
                cfg.finetune.train.epochs = *e;
            }
            cmd_finetune(&cfg, model, out)?;
        }
        Command::Verify { keys, adapter, published, model, endpoint, sampled, trials, threshold, tau, report } => {
            if let Some(t) = trials {
                cfg.verify.trials = *t;
            }
            if let Some(t) = threshold {
                cfg.verify.threshold = *t;
            }
            if let Some(t) = tau {
                cfg.verify.tau = *t;
            }
            let target = match (model, endpoint) {
                (Some(m), None) => Target::Checkpoint(m.clone()),
                (None, Some(url)) => Target::Endpoint(url.clone()),
                _ => return Err(Error::InvalidConfig("give exactly one of --model or --endpoint".into())),
            };
            let whitebox = adapter.as_ref().zip(published.as_ref());
            let outcome = cmd_verify(&cfg, keys, whitebox, &target, *sampled)?;
            if let Some(path) = report {
                std::fs::write(path, serde_json::to_string_pretty(&outcome)?)?;
            }
            println!("{}", outcome.summary());
            return Ok(if outcome.verified { exit::OK } else { exit::NOT_VERIFIED });
        }
        Command::Analyze { checkpoints, probe, csv, out } => {
            let text = cmd_analyze(checkpoints, probe.as_deref().unwrap_or(DEFAULT_PROBE), *csv)?;
            match out {
                Some(path) => std::fs::write(path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::LeakProbe { model, adapter, decryption, samples, temperature, max_new, out } => {
            if let Some(s) = samples {
                cfg.leak_probe.samples = *s;
            }
            if let Some(t) = temperature {
                cfg.leak_probe.temperature = *t;
            }
            if let Some(m) = max_new {
                cfg.leak_probe.max_new = *m;
            }
            let y = decryption.clone().unwrap_or_else(|| cfg.fingerprint.decryption.clone());
            let report = cmd_leak_probe(&cfg.leak_probe, model, adapter.as_deref(), &y)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
        }
        Command::Serve { model, adapter, addr, max_requests } => {
            let params = load_params(model)?;
            let adapter = adapter.as_deref().map(load_adapter).transpose()?;
            let gen = match &adapter {
                Some(a) => LocalGenerator::with_adapter(&params, a)?,
                None => LocalGenerator::new(&params),
            };
            let server = tiny_http::Server::http(addr.as_str()).map_err(|e| Error::Unreachable(e.to_string()))?;
            eprintln!("serving {} on http://{}", model.display(), server.server_addr());
            serve(&server, &gen, *max_requests);
        }
    }
    Ok(exit::OK)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn write_resolved(cfg: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml())?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParameters<f32>> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.has_tensor_prefix("adapter.") {
        return Err(Error::Format(format!("{} holds an adapter, not a model", path.display())));
    }
    ckpt.to_params()
}

pub fn load_adapter(path: &Path) -> Result<FAdapter<f32>> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.tensor(ADAPTER_A).is_none() {
        return Err(Error::Format(format!("{} holds no adapter tensors", path.display())));
    }
    ckpt.to_adapter()
}

fn metadata(entries: &[(&str, String)]) -> BTreeMap<String, String> {
    entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Pretrains a base model and writes it with its log and resolved config.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<ModelParameters<f32>> {
    let section = &cfg.pretrain;
    let train_docs = pretraining_corpus(section.corpus_docs, section.corpus_seed);
    let heldout = heldout_corpus(section.heldout_docs, section.corpus_seed.wrapping_add(100), &train_docs);
    let (params, log) = pretrain(&cfg.model, &section.schedule, &train_docs, &heldout)?;
    let ckpt = Checkpoint::from_params(&params, metadata(&[("role", "base".into())]));
    ckpt.save(out)?;
    let lines: String = log.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect();
    std::fs::write(sidecar(out, "log.jsonl"), lines)?;
    write_resolved(cfg, &sidecar(out, "config.toml"))?;
    if let Some(last) = log.last() {
        println!("held-out loss {:.4} after {} steps", last.heldout_loss, last.step);
    }
    Ok(params)
}

/// Fingerprint pairs and the training dataset described by `cfg`.
pub fn build_dataset(cfg: &RunConfig) -> Result<(FingerprintDataset, Vec<FingerprintPair>)> {
    let fp = &cfg.fingerprint;
    let pool = cfg.pool()?;
    let mut pairs = build_fingerprint_pairs(fp.n, &fp.decryption, fp.template, &pool, fp.pair_seed)?;
    if fp.md5_keys {
        pairs = md5_keys(&pairs);
    }
    let dataset = assemble_dataset(&pairs, &SyntheticTasks::regularization(), fp.k, fp.dataset_seed)?;
    Ok((dataset, pairs))
}

/// Writes `published.ckpt`, `adapter.ckpt` (Adapter variant), `keys.json`,
/// `dataset.jsonl`, `train_log.jsonl`, `fsr_pre.json` and the resolved
/// config into `out_dir`. Returns the FSR_pre report.
pub fn cmd_fingerprint(cfg: &RunConfig, base: &Path, out_dir: &Path) -> Result<VerificationReport> {
    let base_params = load_params(base)?;
    let (dataset, pairs) = build_dataset(cfg)?;
    let outcome = fingerprint_train(&base_params, &dataset, &cfg.fingerprint.train)?;
    std::fs::create_dir_all(out_dir)?;
    let provenance = outcome.published.provenance.clone();
    let published = Checkpoint::from_params(
        &outcome.published.params,
        metadata(&[
            ("role", "published".into()),
            ("variant", serde_json::to_value(cfg.fingerprint.train.variant)?.as_str().unwrap_or("").into()),
            ("provenance", provenance.clone()),
            ("decryption", cfg.fingerprint.decryption.clone()),
            ("decryption_visibility", "public".into()),
        ]),
    );
    if published.has_tensor_prefix("adapter.") {
        return Err(Error::Format("refusing to publish adapter tensors".into()));
    }
    published.save(&out_dir.join("published.ckpt"))?;
    if let Some(adapter) = &outcome.adapter {
        let ckpt = Checkpoint::from_adapter(
            adapter,
            &base_params.config,
            metadata(&[("role", "adapter".into()), ("visibility", PRIVATE_MARKER.into()), ("provenance", provenance.clone())]),
        );
        ckpt.save_private(&out_dir.join("adapter.ckpt"))?;
    }
    KeyFile::new(&pairs, provenance)?.save(&out_dir.join("keys.json"))?;
    std::fs::write(out_dir.join("dataset.jsonl"), dataset.to_jsonl())?;
    std::fs::write(out_dir.join("train_log.jsonl"), outcome.log_jsonl())?;
    let gen = match &outcome.adapter {
        Some(a) => LocalGenerator::with_adapter(&outcome.published.params, a)?,
        None => LocalGenerator::new(&outcome.published.params),
    };
    let report = verify_greedy(&gen, &pairs, cfg.verify.seed)?;
    std::fs::write(out_dir.join("fsr_pre.json"), report.to_json())?;
    write_resolved(cfg, &out_dir.join("config.toml"))?;
    Ok(report)
}

/// Fine-tunes a published checkpoint on the synthetic downstream corpus.
pub fn cmd_finetune(cfg: &RunConfig, model: &Path, out: &Path) -> Result<ModelParameters<f32>> {
    let source = Checkpoint::load(model)?;
    let params = load_params(model)?;
    let corpus = SyntheticTasks::downstream().instances(cfg.downstream_size(), cfg.finetune.corpus_seed);
    let tuned = user_finetune(&params, &corpus, cfg.finetune.method, &cfg.finetune.train)?;
    let ckpt = Checkpoint::from_params(
        &tuned,
        metadata(&[
            ("role", "fine_tuned".into()),
            ("method", cfg.finetune.method.name().into()),
            ("parent_digest", source.digest()?),
            ("epochs", cfg.finetune.train.epochs.to_string()),
        ]),
    );
    ckpt.save(out)?;
    write_resolved(cfg, &sidecar(out, "config.toml"))?;
    Ok(tuned)
}

pub enum Target {
    Checkpoint(PathBuf),
    Endpoint(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyOutcome {
    pub schema_version: u32,
    pub scenario: String,
    pub decision_rule: String,
    pub verified: bool,
    pub report: VerificationReport,
}

impl VerifyOutcome {
    pub fn summary(&self) -> String {
        let verdict = if self.verified { "VERIFIED" } else { "NOT VERIFIED" };
        match &self.report.mode {
            ReportMode::Greedy => format!(
                "{verdict}: FSR {}/{} ({})",
                self.report.activated_count(),
                self.report.per_key.len(),
                self.decision_rule
            ),
            ReportMode::Sampled { mean, p_value, .. } => {
                format!("{verdict}: mean FSR {mean:.3}, p = {p_value:.3e} ({})", self.decision_rule)
            }
        }
    }
}

/// Runs white-box recombination when `whitebox = (adapter, published)` is
/// given, black-box probing of the target otherwise.
pub fn cmd_verify(
    cfg: &RunConfig,
    keys: &Path,
    whitebox: Option<(&PathBuf, &PathBuf)>,
    target: &Target,
    sampled: bool,
) -> Result<VerifyOutcome> {
    let pairs = KeyFile::load(keys)?.pairs();
    let v = &cfg.verify;
    let (scenario, report) = if let Some((adapter, published)) = whitebox {
        let Target::Checkpoint(user) = target else {
            return Err(Error::InvalidConfig("white-box verification needs a checkpoint, not an endpoint".into()));
        };
        let user = load_params(user)?;
        let published = load_params(published)?;
        if !user.config.same_shape(&published.config) {
            return Err(Error::ShapeMismatch("suspect and published models have different architectures".into()));
        }
        let adapter = load_adapter(adapter)?;
        ("white_box", verify_whitebox(&user.embedding, &published, &adapter, &pairs)?)
    } else {
        let local = match target {
            Target::Checkpoint(path) => Some(load_params(path)?),
            Target::Endpoint(_) => None,
        };
        let gen: Box<dyn Generator + '_> = match (target, &local) {
            (_, Some(params)) => Box::new(LocalGenerator::new(params)),
            (Target::Endpoint(url), None) => Box::new(HttpGenerator::new(url.clone())),
            (Target::Checkpoint(_), None) => unreachable!("checkpoint loaded above"),
        };
        let gen = gen.as_ref();
        let report = if sampled {
            verify_blackbox_sampled(gen, &pairs, v.sampling(), v.trials, v.threshold, v.seed)?
        } else {
            verify_greedy(gen, &pairs, v.seed)?
        };
        ("black_box", report)
    };
    let (verified, rule) = match &report.mode {
        ReportMode::Greedy => (report.fsr >= v.tau, format!("FSR >= {}", v.tau)),
        ReportMode::Sampled { p_value, threshold, .. } => {
            (*p_value < v.alpha, format!("p < {} for mean FSR > {threshold}", v.alpha))
        }
    };
    Ok(VerifyOutcome {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: scenario.into(),
        decision_rule: rule,
        verified,
        report,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftEntry {
    pub model_a: String,
    pub model_b: String,
    #[serde(flatten)]
    pub shift: ShiftReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeReport {
    pub schema_version: u32,
    pub probe: String,
    pub pairs: Vec<ShiftEntry>,
}

/// Shift metrics for every pair of checkpoints, as JSON or CSV text.
pub fn cmd_analyze(checkpoints: &[PathBuf], probe: &str, csv: bool) -> Result<String> {
    let models = checkpoints.iter().map(|p| load_params(p)).collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            entries.push(ShiftEntry {
                model_a: checkpoints[i].display().to_string(),
                model_b: checkpoints[j].display().to_string(),
                shift: parameter_shift(&models[i], &models[j], probe)?,
            });
        }
    }
    if csv {
        let mut text = String::from(ShiftReport::CSV_HEADER);
        text.push('\n');
        for e in &entries {
            text.push_str(&e.shift.csv_row(&e.model_a, &e.model_b));
            text.push('\n');
        }
        Ok(text)
    } else {
        let report = AnalyzeReport { schema_version: REPORT_SCHEMA_VERSION, probe: probe.into(), pairs: entries };
        Ok(serde_json::to_string_pretty(&report)? + "\n")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LeakReport {
    pub schema_version: u32,
    pub decryption: String,
    pub samples: usize,
    pub temperature: f64,
    pub max_new: usize,
    pub seed: u64,
    pub occurrences: usize,
    pub rate: f64,
}

pub fn cmd_leak_probe(section: &LeakProbeSection, model: &Path, adapter: Option<&Path>, y: &str) -> Result<LeakReport> {
    let params = load_params(model)?;
    let adapter = adapter.map(load_adapter).transpose()?;
    let gen = match &adapter {
        Some(a) => LocalGenerator::with_adapter(&params, a)?,
        None => LocalGenerator::new(&params),
    };
    let occurrences = leakage_probe(&gen, y, section.samples, section.temperature, section.max_new, section.seed)?;
    Ok(LeakReport {
        schema_version: REPORT_SCHEMA_VERSION,
        decryption: y.into(),
        samples: section.samples,
        temperature: section.temperature,
        max_new: section.max_new,
        seed: section.seed,
        occurrences,
        rate: occurrences as f64 / section.samples as f64,
    })
}
