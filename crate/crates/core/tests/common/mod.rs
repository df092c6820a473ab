//! Independent oracles shared by integration tests. Nothing here calls the
//! implementation path it is used to check.
#![allow(dead_code)]

use ifp::lm::network::Network;
use ifp::lm::{GradScope, ModelConfig, ModelParameters};
use ifp::train::adapter::FAdapter;
use ifp::train::lora::AttentionLora;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Re-draws every tensor uniformly in `±spread` so the numerical checks see
/// non-trivial activations.
pub fn scrambled_tiny(seed: u64, spread: f64) -> ModelParameters<f64> {
    let cfg = ModelConfig::tiny(seed);
    let mut p = ModelParameters::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for mut v in p.views_mut() {
        v.mapv_inplace(|_| rng.gen_range(-spread..spread));
    }
    for layer in &mut p.layers {
        layer.ln1_gain.mapv_inplace(|g| 1.0 + g);
        layer.ln2_gain.mapv_inplace(|g| 1.0 + g);
    }
    p.final_gain.mapv_inplace(|g| 1.0 + g);
    p
}

pub fn scrambled_adapter(d: usize, rank: usize, seed: u64) -> FAdapter<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = FAdapter::<f64>::zeros(d, rank);
    a.a.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    a.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    a
}

pub fn scrambled_lora(cfg: &ModelConfig, rank: usize, seed: u64) -> AttentionLora<f64> {
    let mut l = AttentionLora::<f64>::init(cfg.n_layers, cfg.d_model, rank, 0.5, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    l.for_each_mut(|m| m.mapv_inplace(|_| rng.gen_range(-0.5..0.5)));
    l
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + 1e-5).sqrt();
    (0..x.len()).map(|i| (x[i] - mean) * rstd * gain[i] + bias[i]).collect()
}

fn matvec(x: &[f64], w: &ndarray::Array2<f64>) -> Vec<f64> {
    let (rows, cols) = w.dim();
    let mut out = vec![0.0; cols];
    for j in 0..cols {
        let mut acc = 0.0;
        for i in 0..rows {
            acc += x[i] * w[[i, j]];
        }
        out[j] = acc;
    }
    out
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
}

/// Straight-line forward pass, one position and one scalar at a time.
pub fn naive_logits(
    p: &ModelParameters<f64>,
    adapter: Option<&FAdapter<f64>>,
    lora: Option<&AttentionLora<f64>>,
    tokens: &[u32],
) -> Vec<Vec<f64>> {
    let cfg = &p.config;
    let d = cfg.d_model;
    let dh = d / cfg.n_heads;
    let t_len = tokens.len();
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            let e: Vec<f64> = (0..d).map(|i| p.embedding[[tok as usize, i]]).collect();
            let mut row = e.clone();
            if let Some(a) = adapter {
                for r in 0..a.rank() {
                    let mut low = 0.0;
                    for j in 0..d {
                        low += e[j] * a.a[[j, r]];
                    }
                    for i in 0..d {
                        row[i] += low * a.b[[r, i]];
                    }
                }
            }
            for i in 0..d {
                row[i] += p.position[[t, i]];
            }
            row
        })
        .collect();

    for (l, layer) in p.layers.iter().enumerate() {
        let mut w = [layer.wq.clone(), layer.wk.clone(), layer.wv.clone(), layer.wo.clone()];
        if let Some(lr) = lora {
            for (which, m) in w.iter_mut().enumerate() {
                let (a, b) = &lr.factors[l][which];
                for i in 0..d {
                    for j in 0..d {
                        let mut acc = 0.0;
                        for r in 0..a.ncols() {
                            acc += a[[i, r]] * b[[r, j]];
                        }
                        m[[i, j]] += lr.scale * acc;
                    }
                }
            }
        }
        let h: Vec<Vec<f64>> = x
            .iter()
            .map(|r| layer_norm(r, layer.ln1_gain.as_slice().unwrap(), layer.ln1_bias.as_slice().unwrap()))
            .collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| matvec(r, &w[0])).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| matvec(r, &w[1])).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| matvec(r, &w[2])).collect();
        for t in 0..t_len {
            let mut ctx = vec![0.0; d];
            for head in 0..cfg.n_heads {
                let off = head * dh;
                let scores: Vec<f64> = (0..=t)
                    .map(|u| (0..dh).map(|i| q[t][off + i] * k[u][off + i]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for u in 0..=t {
                    let pr = (scores[u] - m).exp() / z;
                    for i in 0..dh {
                        ctx[off + i] += pr * v[u][off + i];
                    }
                }
            }
            let out = matvec(&ctx, &w[3]);
            for i in 0..d {
                x[t][i] += out[i];
            }
        }
        for row in x.iter_mut() {
            let h2 = layer_norm(row, layer.ln2_gain.as_slice().unwrap(), layer.ln2_bias.as_slice().unwrap());
            let mut pre = matvec(&h2, &layer.w1);
            for (j, u) in pre.iter_mut().enumerate() {
                *u = gelu(*u + layer.b1[j]);
            }
            let f = matvec(&pre, &layer.w2);
            for i in 0..d {
                row[i] += f[i] + layer.b2[i];
            }
        }
    }
    x.iter()
        .map(|row| {
            let hf = layer_norm(row, p.final_gain.as_slice().unwrap(), p.final_bias.as_slice().unwrap());
            let mut logits = matvec(&hf, &p.head);
            for (j, z) in logits.iter_mut().enumerate() {
                *z += p.head_bias[j];
            }
            logits
        })
        .collect()
}

/// Mean masked NLL computed from the naive forward pass.
pub fn naive_loss(
    p: &ModelParameters<f64>,
    adapter: Option<&FAdapter<f64>>,
    lora: Option<&AttentionLora<f64>>,
    tokens: &[u32],
    mask: &[bool],
) -> f64 {
    let logits = naive_logits(p, adapter, lora, tokens);
    let mut total = 0.0;
    let mut n = 0;
    for t in 0..tokens.len() - 1 {
        if !mask[t] {
            continue;
        }
        let row = &logits[t];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[tokens[t + 1] as usize];
        n += 1;
    }
    total / n as f64
}

/// Largest relative error between analytic gradients and central finite
/// differences (step `eps`) over every parameter the scope trains.
pub fn gradient_check(scope: GradScope, eps: f64) -> f64 {
    let params = scrambled_tiny(11, 0.4);
    let adapter = scrambled_adapter(params.config.d_model, 2, 12);
    let lora = scrambled_lora(&params.config, 2, 13);
    let tokens: Vec<u32> = vec![256, 72, 105, 33, 0xe3, 0x83, 0x8f, 72, 10, 70, 73];
    let mask: Vec<bool> = (0..tokens.len()).map(|t| t != 1 && t + 1 < tokens.len()).collect();

    let use_adapter = scope == GradScope::EmbeddingAndAdapter;
    let use_lora = scope == GradScope::AttentionLowRank;
    let mut net = Network::new(&params);
    if use_adapter {
        net = net.with_adapter(&adapter);
    }
    if use_lora {
        net = net.with_lora(&lora);
    }
    let out = ifp::lm::causal_lm_loss(&net, &tokens, &mask, scope).unwrap();
    let g = out.gradients;
    let loss_at = |p: &ModelParameters<f64>, a: &FAdapter<f64>, l: &AttentionLora<f64>| {
        naive_loss(p, use_adapter.then_some(a), use_lora.then_some(l), &tokens, &mask)
    };
    let base = loss_at(&params, &adapter, &lora);
    assert!((base - out.loss).abs() < 1e-9, "loss {} vs oracle {}", out.loss, base);

    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;

    if matches!(scope, GradScope::All | GradScope::Embedding | GradScope::EmbeddingAndAdapter) {
        let trains_all = scope == GradScope::All;
        let names = ModelParameters::<f64>::tensor_names(&params.config);
        for (ti, (name, group)) in names.iter().enumerate() {
            if !trains_all && !group.is_embedding() {
                let grad_view = &g.model.views()[ti];
                assert!(grad_view.iter().all(|&x| x == 0.0), "{name} received gradient outside scope");
                continue;
            }
            let len = params.views()[ti].len();
            for idx in (0..len).step_by((len / 7).max(1)) {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.views_mut()[ti].as_slice_mut().unwrap()[idx] += eps;
                minus.views_mut()[ti].as_slice_mut().unwrap()[idx] -= eps;
                let numeric = (loss_at(&plus, &adapter, &lora) - loss_at(&minus, &adapter, &lora)) / (2.0 * eps);
                let analytic = g.model.views()[ti].as_slice().unwrap()[idx];
                worst = worst.max(rel(analytic, numeric));
            }
        }
        // every token row actually used, all columns
        for &tok in &tokens {
            for col in 0..params.config.d_model {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.embedding[[tok as usize, col]] += eps;
                minus.embedding[[tok as usize, col]] -= eps;
                let numeric = (loss_at(&plus, &adapter, &lora) - loss_at(&minus, &adapter, &lora)) / (2.0 * eps);
                worst = worst.max(rel(g.model.embedding[[tok as usize, col]], numeric));
            }
        }
    }
    if use_adapter {
        let ga = g.adapter.as_ref().unwrap();
        for which in 0..2 {
            let len = if which == 0 { adapter.a.len() } else { adapter.b.len() };
            for idx in 0..len {
                let mut plus = adapter.clone();
                let mut minus = adapter.clone();
                let pick = |a: &mut FAdapter<f64>, delta: f64| {
                    let m = if which == 0 { &mut a.a } else { &mut a.b };
                    m.as_slice_mut().unwrap()[idx] += delta;
                };
                pick(&mut plus, eps);
                pick(&mut minus, -eps);
                let numeric = (loss_at(&params, &plus, &lora) - loss_at(&params, &minus, &lora)) / (2.0 * eps);
                let analytic = if which == 0 { ga.a.as_slice().unwrap()[idx] } else { ga.b.as_slice().unwrap()[idx] };
                worst = worst.max(rel(analytic, numeric));
            }
        }
    }
    if use_lora {
        let gl = g.lora.as_ref().unwrap();
        for which in 0..4 {
            for side in 0..2 {
                let len = if side == 0 { lora.factors[0][which].0.len() } else { lora.factors[0][which].1.len() };
                for idx in 0..len {
                    let bump = |delta: f64| {
                        let mut l = lora.clone();
                        let m = if side == 0 { &mut l.factors[0][which].0 } else { &mut l.factors[0][which].1 };
                        m.as_slice_mut().unwrap()[idx] += delta;
                        l
                    };
                    let numeric = (loss_at(&params, &adapter, &bump(eps)) - loss_at(&params, &adapter, &bump(-eps))) / (2.0 * eps);
                    let (ga, gb) = &gl.factors[0][which];
                    let analytic = if side == 0 { ga.as_slice().unwrap()[idx] } else { gb.as_slice().unwrap()[idx] };
                    worst = worst.max(rel(analytic, numeric));
                }
            }
        }
    }
    worst
}

/// One-sided upper-tail probability of Student's t with `df` degrees of
/// freedom. Substituting `x = √df · tan θ` turns the density into `cos^(df-1) θ`,
/// which composite Simpson integrates to near machine precision.
pub fn t_upper_tail_oracle(t: f64, df: f64) -> f64 {
    let f = |theta: f64| theta.cos().powf(df - 1.0);
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let total = simpson(-half_pi, half_pi, 200_000);
    simpson((t / df.sqrt()).atan(), half_pi, 200_000) / total
}
