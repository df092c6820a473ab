mod common;

use common::{gradient_check, naive_logits, scrambled_adapter, scrambled_lora, scrambled_tiny};
use ifp::lm::network::Network;
use ifp::lm::{causal_lm_loss, causal_lm_loss_with_targets, forward, GradScope, ModelConfig, ModelParameters};

const TOKENS: [u32; 9] = [256, 84, 104, 105, 115, 0xe3, 0x83, 0xaa, 33];

#[test]
fn forward_matches_naive_oracle() {
    let p = scrambled_tiny(3, 0.5);
    let got = forward(&p, &TOKENS).unwrap();
    let want = naive_logits(&p, None, None, &TOKENS);
    for (t, row) in want.iter().enumerate() {
        for (j, &z) in row.iter().enumerate() {
            assert!((got[[t, j]] - z).abs() < 1e-6, "t={t} j={j}");
        }
    }
}

#[test]
fn adapter_and_lora_forward_match_oracle() {
    let p = scrambled_tiny(4, 0.5);
    let a = scrambled_adapter(8, 2, 1);
    let l = scrambled_lora(&p.config, 3, 2);
    let got = Network::new(&p).with_adapter(&a).with_lora(&l).logits(&TOKENS).unwrap();
    let want = naive_logits(&p, Some(&a), Some(&l), &TOKENS);
    for (t, row) in want.iter().enumerate() {
        for (j, &z) in row.iter().enumerate() {
            assert!((got[[t, j]] - z).abs() < 1e-6);
        }
    }
}

#[test]
fn f32_forward_tracks_f64() {
    let p64 = scrambled_tiny(5, 0.5);
    let p32: ModelParameters<f32> = p64.cast();
    let a = forward(&p64, &TOKENS).unwrap();
    let b = forward(&p32, &TOKENS).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - *y as f64).abs() < 1e-4);
    }
}

#[test]
fn shape_contract_and_normalization() {
    let p = ModelParameters::<f32>::init(&ModelConfig::default()).unwrap();
    let logits = forward(&p, &TOKENS[..5]).unwrap();
    assert_eq!(logits.dim(), (5, 257));
    for row in logits.rows() {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let s: f64 = row.iter().map(|&z| (z as f64 - m).exp()).sum();
        let probs: f64 = row.iter().map(|&z| (z as f64 - m).exp() / s).sum();
        assert!((probs - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|z| z.is_finite()));
    }
}

#[test]
fn causal_masking() {
    let p = scrambled_tiny(6, 0.5);
    let base = forward(&p, &TOKENS).unwrap();
    for pos in 1..TOKENS.len() {
        let mut changed = TOKENS;
        changed[pos] = (changed[pos] + 17) % 256;
        let other = forward(&p, &changed).unwrap();
        for t in 0..pos {
            for j in 0..257 {
                assert_eq!(base[[t, j]], other[[t, j]], "position {t} saw token {pos}");
            }
        }
    }
}

#[test]
fn single_position_loss_is_negative_log_prob() {
    let p = scrambled_tiny(7, 0.5);
    let logits = forward(&p, &TOKENS).unwrap();
    let t = 3;
    let row = logits.row(t);
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
    let prob = (row[TOKENS[t + 1] as usize] - m).exp() / z;
    let mut mask = vec![false; TOKENS.len()];
    mask[t] = true;
    let out = causal_lm_loss(&Network::new(&p), &TOKENS, &mask, GradScope::All).unwrap();
    assert!((out.loss - (-prob.ln())).abs() < 1e-12);
    assert_eq!(out.positions, 1);
}

#[test]
fn unmasked_targets_do_not_matter() {
    let p = scrambled_tiny(8, 0.5);
    let net = Network::new(&p);
    let mut targets: Vec<u32> = TOKENS[1..].to_vec();
    targets.push(0);
    let mask: Vec<bool> = (0..TOKENS.len()).map(|t| t >= 4 && t + 1 < TOKENS.len()).collect();
    let a = causal_lm_loss_with_targets(&net, &TOKENS, &targets, &mask, GradScope::All).unwrap();
    targets.swap(0, 2);
    targets[1] = 200;
    let b = causal_lm_loss_with_targets(&net, &TOKENS, &targets, &mask, GradScope::All).unwrap();
    assert_eq!(a.loss, b.loss);
}

#[test]
fn empty_mask_is_an_error() {
    let p = scrambled_tiny(9, 0.5);
    let mask = vec![false; TOKENS.len()];
    let err = causal_lm_loss(&Network::new(&p), &TOKENS, &mask, GradScope::All).unwrap_err();
    assert!(matches!(err, ifp::Error::EmptyMask));
}

#[test]
fn gradients_match_finite_differences_for_every_scope() {
    for scope in [GradScope::All, GradScope::Embedding, GradScope::EmbeddingAndAdapter, GradScope::AttentionLowRank] {
        let worst = gradient_check(scope, 1e-4);
        assert!(worst < 1e-3, "{scope:?}: max relative error {worst}");
    }
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let p = scrambled_tiny(10, 0.5);
    let a = scrambled_adapter(8, 2, 3);
    let net = Network::new(&p).with_adapter(&a);
    let full = net.logits(&TOKENS).unwrap();
    let mut cache = net.new_cache();
    for (t, &tok) in TOKENS.iter().enumerate() {
        let row = net.step(&mut cache, tok, true).unwrap().unwrap();
        for j in 0..257 {
            assert!((row[j] - full[[t, j]]).abs() < 1e-9);
        }
    }
    // prefilling a prefix and stepping the rest agrees with the full pass
    let split = TOKENS.len() / 2;
    let (mut cache, last) = net.prefill(&TOKENS[..split]).unwrap();
    for j in 0..257 {
        assert!((last[j] - full[[split - 1, j]]).abs() < 1e-9);
    }
    for (t, &tok) in TOKENS.iter().enumerate().skip(split) {
        let row = net.step(&mut cache, tok, true).unwrap().unwrap();
        for j in 0..257 {
            assert!((row[j] - full[[t, j]]).abs() < 1e-9);
        }
    }
}
