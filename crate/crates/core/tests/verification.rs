mod common;

use common::t_upper_tail_oracle;
use ifp::cli::serve;
use ifp::data::{build_fingerprint_pairs, render, FingerprintPair, SecretPool, TemplateKind, DEFAULT_DECRYPTION};
use ifp::lm::{DecodePolicy, ModelConfig, ModelParameters};
use ifp::verify::one_sided_t_test;
use ifp::verify::{
    fsr, verify_blackbox_sampled, verify_greedy, verify_whitebox, Generator, HttpGenerator, LocalGenerator,
    ReportMode,
};
use ifp::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairs(n: usize) -> Vec<FingerprintPair> {
    build_fingerprint_pairs(n, DEFAULT_DECRYPTION, TemplateKind::Simple, &SecretPool::default(), 21).unwrap()
}

fn small_model(seed: u64) -> ModelParameters<f32> {
    let cfg = ModelConfig { n_layers: 1, d_model: 16, n_heads: 2, d_ff: 32, max_seq_len: 512, seed, ..Default::default() };
    ModelParameters::init(&cfg).unwrap()
}

#[test]
fn t_test_matches_the_reference_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let n = rng.gen_range(3..12);
        let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=10) as f64 / 10.0).collect();
        let threshold = rng.gen_range(0.3..0.9);
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let got = one_sided_t_test(&samples, threshold);
        if var == 0.0 {
            assert_eq!(got, if mean > threshold { 0.0 } else { 1.0 });
            continue;
        }
        let t = (mean - threshold) / (var / n as f64).sqrt();
        let want = t_upper_tail_oracle(t, (n - 1) as f64);
        assert!((got - want).abs() < 1e-6, "case {case}: {got} vs {want}");
    }
}

#[test]
fn t_oracle_agrees_with_closed_forms() {
    // df = 1 is Cauchy; df = 2 has an algebraic tail
    for t in [-2.0, -0.3, 0.0, 0.7, 1.5, 4.0] {
        let cauchy = 0.5 - f64::atan(t) / std::f64::consts::PI;
        assert!((t_upper_tail_oracle(t, 1.0) - cauchy).abs() < 1e-9);
        let two = 0.5 - t / (2.0 * (t * t + 2.0).sqrt());
        assert!((t_upper_tail_oracle(t, 2.0) - two).abs() < 1e-9);
    }
}

#[test]
fn t_test_zero_variance_convention() {
    assert_eq!(one_sided_t_test(&[1.0; 10], 0.75), 0.0);
    assert_eq!(one_sided_t_test(&[0.5; 10], 0.75), 1.0);
}

/// Answers the decryption for the first `hits` keys and nothing else.
fn partial(keys: &[FingerprintPair], hits: usize) -> impl Fn(&str, DecodePolicy, usize, u64) -> Result<String> + '_ {
    move |prompt: &str, _, _, _| {
        let known = keys[..hits].iter().any(|p| render(p).0 == prompt);
        Ok(if known { format!("the message is: {DEFAULT_DECRYPTION}!") } else { "nothing".into() })
    }
}

#[test]
fn fsr_counts_activated_keys_and_is_monotone() {
    let keys = pairs(10);
    let mut last = -1.0;
    for hits in 0..=10 {
        let g = partial(&keys, hits);
        let value = fsr(&g, &keys, DecodePolicy::Greedy, 64, 0).unwrap();
        assert_eq!(value, hits as f64 / 10.0);
        assert!(value >= last);
        last = value;
        let report = verify_greedy(&g, &keys, 0).unwrap();
        assert_eq!(report.activated_count(), hits);
        assert!(report.per_key.iter().all(|k| k.activated == (k.index < hits)));
    }
}

#[test]
fn sampled_verification_reports_trials_and_p_value() {
    let keys = pairs(4);
    let g = partial(&keys, 4);
    let report = verify_blackbox_sampled(&g, &keys, DecodePolicy::api_default(), 10, 0.75, 0).unwrap();
    let ReportMode::Sampled { trials, trial_fsrs, mean, p_value, .. } = report.mode else { panic!("greedy report") };
    assert_eq!(trials, 10);
    assert_eq!(trial_fsrs, vec![1.0; 10]);
    assert_eq!((mean, p_value), (1.0, 0.0));
    assert!(report.per_key.iter().all(|k| k.activated && k.activations == 10));

    let silent = partial(&keys, 0);
    let report = verify_blackbox_sampled(&silent, &keys, DecodePolicy::api_default(), 10, 0.75, 0).unwrap();
    let ReportMode::Sampled { p_value, .. } = report.mode else { panic!("greedy report") };
    assert_eq!(p_value, 1.0);
    assert!(verify_blackbox_sampled(&g, &keys, DecodePolicy::Greedy, 10, 0.75, 0).is_err());
    assert!(verify_blackbox_sampled(&g, &keys, DecodePolicy::api_default(), 1, 0.75, 0).is_err());
}

#[test]
fn remote_endpoint_matches_local_generation() {
    let params = small_model(31);
    let local = LocalGenerator::new(&params);
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", server.server_addr().to_ip().unwrap());
    let prompts = ["hello", "add 2 and 3\n", ""];
    let policies = [DecodePolicy::Greedy, DecodePolicy::api_default()];
    std::thread::scope(|s| {
        s.spawn(|| serve(&server, &local, Some(prompts.len() * policies.len())));
        let remote = HttpGenerator::new(url.clone());
        for prompt in prompts {
            for policy in policies {
                let want = local.generate(prompt, policy, 12, 5).unwrap();
                let got = remote.generate(prompt, policy, 12, 5).unwrap();
                assert_eq!(got, want, "{prompt:?} {policy:?}");
            }
        }
    });
}

#[test]
fn unreachable_endpoint_is_reported() {
    let addr = {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        server.server_addr().to_ip().unwrap()
    };
    let remote = HttpGenerator::new(format!("http://{addr}/"));
    let err = remote.generate("x", DecodePolicy::Greedy, 4, 0).unwrap_err();
    assert!(matches!(err, Error::Unreachable(_)), "{err}");
}

#[test]
fn whitebox_rejects_foreign_embedding_shapes() {
    let published = small_model(1);
    let adapter = ifp::train::FAdapter::<f32>::init(16, 4, 0).unwrap();
    let other = ModelParameters::<f32>::init(&ModelConfig { d_model: 8, n_heads: 2, ..published.config.clone() }).unwrap();
    let err = verify_whitebox(&other.embedding, &published, &adapter, &pairs(2)).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
}
