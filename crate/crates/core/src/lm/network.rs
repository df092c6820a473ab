//! Forward pass, exact backward pass and single-token decoding step.
//!
//! Pre-norm transformer: `x ← x + Attn(LN₁(x))`, `x ← x + FFN(LN₂(x))`,
//! then a final norm and an untied linear head. Token embeddings optionally
//! pass through an F-Adapter before the positional table is added, and the
//! attention projections optionally carry low-rank deltas.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::{ModelParameters, Scalar};
use crate::train::adapter::FAdapter;
use crate::train::lora::AttentionLora;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Which parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GradScope {
    /// Every model tensor.
    All,
    /// Token embedding only (`θ_E`).
    Embedding,
    /// Token embedding plus the F-Adapter.
    EmbeddingAndAdapter,
    /// Only the low-rank attention factors.
    AttentionLowRank,
}

impl GradScope {
    fn non_embedding(self) -> bool {
        self == GradScope::All
    }
    fn embedding(self) -> bool {
        matches!(self, GradScope::All | GradScope::Embedding | GradScope::EmbeddingAndAdapter)
    }
    fn attention(self) -> bool {
        matches!(self, GradScope::All | GradScope::AttentionLowRank)
    }
}

/// Gradient buffers. Tensors outside the requested scope stay zero and
/// optional blocks are present only when the scope trains them.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub model: ModelParameters<F>,
    pub adapter: Option<FAdapter<F>>,
    pub lora: Option<AttentionLora<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros(net: &Network<'_, F>, scope: GradScope) -> Result<Self> {
        let adapter = match scope {
            GradScope::EmbeddingAndAdapter => Some(
                net.adapter
                    .ok_or_else(|| Error::InvalidConfig("adapter scope without an adapter".into()))?
                    .zeros_like(),
            ),
            _ => None,
        };
        let lora = match scope {
            GradScope::AttentionLowRank => Some(
                net.lora
                    .ok_or_else(|| Error::InvalidConfig("low-rank scope without factors".into()))?
                    .zeros_like(),
            ),
            _ => None,
        };
        Ok(Self { model: net.params.zeros_like(), adapter, lora })
    }

    pub fn scale(&mut self, s: F) {
        for mut v in self.model.views_mut() {
            v.mapv_inplace(|x| x * s);
        }
        if let Some(a) = &mut self.adapter {
            a.a.mapv_inplace(|x| x * s);
            a.b.mapv_inplace(|x| x * s);
        }
        if let Some(l) = &mut self.lora {
            l.for_each_mut(|m| m.mapv_inplace(|x| x * s));
        }
    }

    /// Sum of squares over every buffer, in `f64`.
    pub fn squared_norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in self.model.views() {
            acc += v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>();
        }
        if let Some(a) = &self.adapter {
            acc += a.a.iter().chain(a.b.iter()).map(|x| x.as_f64().powi(2)).sum::<f64>();
        }
        if let Some(l) = &self.lora {
            for layer in &l.factors {
                for (a, b) in layer {
                    acc += a.iter().chain(b.iter()).map(|x| x.as_f64().powi(2)).sum::<f64>();
                }
            }
        }
        acc
    }
}

/// A parameter set plus the optional adapter and low-rank factors that
/// modify its forward pass.
pub struct Network<'a, F> {
    pub params: &'a ModelParameters<F>,
    pub adapter: Option<&'a FAdapter<F>>,
    pub lora: Option<&'a AttentionLora<F>>,
    effective_attention: Option<Vec<[Array2<F>; 4]>>,
}

struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

struct LayerCache<F> {
    ln1: NormCache<F>,
    h1: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    ln2: NormCache<F>,
    h2: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

/// Everything the backward pass needs, plus per-block hidden states.
pub struct Trace<F> {
    tokens: Vec<usize>,
    emb_rows: Array2<F>,
    emb_low: Option<Array2<F>>,
    layers: Vec<LayerCache<F>>,
    /// Residual stream after each block's final residual add.
    pub block_outputs: Vec<Array2<F>>,
    lnf: NormCache<F>,
    hf: Array2<F>,
    pub logits: Array2<F>,
}

/// Incremental decoding state: cached keys and values per layer.
pub struct KvCache<F> {
    keys: Vec<Array2<F>>,
    values: Vec<Array2<F>>,
    len: usize,
}

impl<F> KvCache<F> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Logits (`T × V`) of `params` on `tokens`.
pub fn forward<F: Scalar>(params: &ModelParameters<F>, tokens: &[u32]) -> Result<Array2<F>> {
    Ok(Network::new(params).trace(tokens)?.logits)
}

fn layer_norm<F: Scalar>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> (Array2<F>, NormCache<F>) {
    let d = F::lit(x.ncols() as f64);
    let eps = F::lit(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        *r = F::one() / (var + eps).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, rstd })
}

/// Returns `(dx, dgain, dbias)`.
fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    gain: &Array1<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let mut dx = dy * gain;
    let d = F::lit(dy.ncols() as f64);
    Zip::from(dx.rows_mut()).and(cache.xhat.rows()).and(&cache.rstd).for_each(|mut row, xhat, &rstd| {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum::<F>() / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &xh| *g = rstd * (*g - m1 - xh * m2));
    });
    (dx, dgain, dbias)
}

fn gelu<F: Scalar>(u: F) -> F {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = F::lit(0.044715);
    let half = F::lit(0.5);
    half * u * (F::one() + (c * (u + k * u * u * u)).tanh())
}

fn gelu_grad<F: Scalar>(u: F) -> F {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = F::lit(0.044715);
    let half = F::lit(0.5);
    let th = (c * (u + k * u * u * u)).tanh();
    half * (F::one() + th) + half * u * (F::one() - th * th) * c * (F::one() + F::lit(3.0) * k * u * u)
}

/// Row-wise causal softmax in place: entries right of the diagonal become 0.
fn causal_softmax<F: Scalar>(scores: &mut Array2<F>) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let max = row.iter().take(i + 1).fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut sum = F::zero();
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = F::zero();
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

impl<'a, F: Scalar> Network<'a, F> {
    pub fn new(params: &'a ModelParameters<F>) -> Self {
        Self { params, adapter: None, lora: None, effective_attention: None }
    }

    pub fn with_adapter(mut self, adapter: &'a FAdapter<F>) -> Self {
        self.adapter = Some(adapter);
        self
    }

    pub fn with_lora(mut self, lora: &'a AttentionLora<F>) -> Self {
        let eff = self
            .params
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let w = layer.attention();
                std::array::from_fn(|i| w[i] + &lora.delta(l, i))
            })
            .collect();
        self.lora = Some(lora);
        self.effective_attention = Some(eff);
        self
    }

    fn attn_weight(&self, layer: usize, which: usize) -> &Array2<F> {
        match &self.effective_attention {
            Some(eff) => &eff[layer][which],
            None => self.params.layers[layer].attention()[which],
        }
    }

    /// Validates architecture consistency between the parameters and any
    /// attached adapter or low-rank factors.
    pub fn check(&self) -> Result<()> {
        self.params.check_shapes()?;
        if let Some(a) = self.adapter {
            a.check()?;
            if a.d_model() != self.params.config.d_model {
                return Err(Error::ShapeMismatch(format!(
                    "adapter width {} does not match d_model {}",
                    a.d_model(),
                    self.params.config.d_model
                )));
            }
        }
        if let Some(l) = self.lora {
            if l.factors.len() != self.params.layers.len() {
                return Err(Error::ShapeMismatch("low-rank factors do not cover every layer".into()));
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        let cfg = &self.params.config;
        if tokens.is_empty() {
            return Err(Error::ShapeMismatch("empty token sequence".into()));
        }
        if tokens.len() > cfg.max_seq_len {
            return Err(Error::OverlongInput { len: tokens.len(), max: cfg.max_seq_len });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::ShapeMismatch(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    fn embed_rows(&self, emb_rows: &Array2<F>) -> (Array2<F>, Option<Array2<F>>) {
        match self.adapter {
            Some(a) => {
                let low = emb_rows.dot(&a.a);
                (emb_rows + &low.dot(&a.b), Some(low))
            }
            None => (emb_rows.clone(), None),
        }
    }

    /// Full forward pass keeping every intermediate.
    pub fn trace(&self, tokens: &[u32]) -> Result<Trace<F>> {
        self.check()?;
        self.check_tokens(tokens)?;
        let p = self.params;
        let cfg = &p.config;
        let t = tokens.len();
        let dh = cfg.head_dim();
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let idx: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();

        let emb_rows = p.embedding.select(Axis(0), &idx);
        let (mut x, emb_low) = self.embed_rows(&emb_rows);
        x += &p.position.slice(s![..t, ..]);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut block_outputs = Vec::with_capacity(cfg.n_layers);
        for (l, layer) in p.layers.iter().enumerate() {
            let (h1, ln1) = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
            let q = h1.dot(self.attn_weight(l, 0));
            let k = h1.dot(self.attn_weight(l, 1));
            let v = h1.dot(self.attn_weight(l, 2));
            let mut ctx = Array2::zeros((t, cfg.d_model));
            let mut probs = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t());
                scores.mapv_inplace(|s| s * scale);
                causal_softmax(&mut scores);
                ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            x += &ctx.dot(self.attn_weight(l, 3));
            let (h2, ln2) = layer_norm(&x, &layer.ln2_gain, &layer.ln2_bias);
            let pre = h2.dot(&layer.w1) + &layer.b1;
            let act = pre.mapv(gelu);
            x += &(act.dot(&layer.w2) + &layer.b2);
            block_outputs.push(x.clone());
            layers.push(LayerCache { ln1, h1, q, k, v, probs, ctx, ln2, h2, pre, act });
        }
        let (hf, lnf) = layer_norm(&x, &p.final_gain, &p.final_bias);
        let logits = hf.dot(&p.head) + &p.head_bias;
        Ok(Trace { tokens: idx, emb_rows, emb_low, layers, block_outputs, lnf, hf, logits })
    }

    pub fn logits(&self, tokens: &[u32]) -> Result<Array2<F>> {
        Ok(self.trace(tokens)?.logits)
    }

    fn route_attention_grad(&self, grads: &mut Gradients<F>, scope: GradScope, layer: usize, which: usize, dw: Array2<F>) {
        match scope {
            GradScope::All => *grads.model.layers[layer].attention_mut()[which] += &dw,
            GradScope::AttentionLowRank => {
                let lora = self.lora.expect("checked by Gradients::zeros");
                let (a, b) = &lora.factors[layer][which];
                let g = grads.lora.as_mut().expect("checked by Gradients::zeros");
                let (da, db) = &mut g.factors[layer][which];
                da.scaled_add(lora.scale, &dw.dot(&b.t()));
                db.scaled_add(lora.scale, &a.t().dot(&dw));
            }
            _ => {}
        }
    }

    /// Accumulates `∂L/∂θ` for the tensors in `scope` into `grads`, given
    /// `∂L/∂logits`.
    pub fn backward(&self, trace: &Trace<F>, dlogits: &Array2<F>, scope: GradScope, grads: &mut Gradients<F>) {
        let p = self.params;
        let cfg = &p.config;
        let t = trace.tokens.len();
        let dh = cfg.head_dim();
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let theta_n = scope.non_embedding();
        let g = &mut grads.model;

        if theta_n {
            g.head += &trace.hf.t().dot(dlogits);
            g.head_bias += &dlogits.sum_axis(Axis(0));
        }
        let dhf = dlogits.dot(&p.head.t());
        let (mut dx, dgain, dbias) = layer_norm_backward(&dhf, &trace.lnf, &p.final_gain);
        if theta_n {
            g.final_gain += &dgain;
            g.final_bias += &dbias;
        }

        for l in (0..cfg.n_layers).rev() {
            let layer = &p.layers[l];
            let c = &trace.layers[l];

            // feed-forward sublayer
            let dact = dx.dot(&layer.w2.t());
            let mut dpre = dact;
            Zip::from(&mut dpre).and(&c.pre).for_each(|d, &u| *d *= gelu_grad(u));
            let dh2 = dpre.dot(&layer.w1.t());
            let (dln2, dg2, db2) = layer_norm_backward(&dh2, &c.ln2, &layer.ln2_gain);
            if theta_n {
                let gl = &mut grads.model.layers[l];
                gl.w2 += &c.act.t().dot(&dx);
                gl.b2 += &dx.sum_axis(Axis(0));
                gl.w1 += &c.h2.t().dot(&dpre);
                gl.b1 += &dpre.sum_axis(Axis(0));
                gl.ln2_gain += &dg2;
                gl.ln2_bias += &db2;
            }
            dx += &dln2;

            // attention sublayer
            if scope.attention() {
                let dwo = c.ctx.t().dot(&dx);
                self.route_attention_grad(grads, scope, l, 3, dwo);
            }
            let dctx = dx.dot(&self.attn_weight(l, 3).t());
            let mut dq = Array2::zeros((t, cfg.d_model));
            let mut dk = Array2::zeros((t, cfg.d_model));
            let mut dv = Array2::zeros((t, cfg.d_model));
            for h in 0..cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let probs = &c.probs[h];
                let d_out = dctx.slice(cols);
                let dp = d_out.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&probs.t().dot(&d_out));
                let mut ds = dp;
                Zip::from(ds.rows_mut()).and(probs.rows()).for_each(|mut drow, prow| {
                    let dot = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum::<F>();
                    Zip::from(&mut drow).and(&prow).for_each(|d, &pv| *d = pv * (*d - dot) * scale);
                });
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            if scope.attention() {
                for (which, d) in [(0, &dq), (1, &dk), (2, &dv)] {
                    let dw = c.h1.t().dot(d);
                    self.route_attention_grad(grads, scope, l, which, dw);
                }
            }
            let dh1 = dq.dot(&self.attn_weight(l, 0).t())
                + dk.dot(&self.attn_weight(l, 1).t())
                + dv.dot(&self.attn_weight(l, 2).t());
            let (dln1, dg1, db1) = layer_norm_backward(&dh1, &c.ln1, &layer.ln1_gain);
            if theta_n {
                let gl = &mut grads.model.layers[l];
                gl.ln1_gain += &dg1;
                gl.ln1_bias += &db1;
            }
            dx += &dln1;
        }

        if theta_n {
            let mut pos = grads.model.position.slice_mut(s![..t, ..]);
            pos += &dx;
        }
        if !scope.embedding() {
            return;
        }
        let d_rows = match self.adapter {
            Some(a) => {
                let dx_bt = dx.dot(&a.b.t());
                if let Some(ga) = grads.adapter.as_mut() {
                    let low = trace.emb_low.as_ref().expect("adapter forward stores E·A");
                    ga.b += &low.t().dot(&dx);
                    ga.a += &trace.emb_rows.t().dot(&dx_bt);
                }
                &dx + &dx_bt.dot(&a.a.t())
            }
            None => dx,
        };
        for (row, &tok) in d_rows.rows().into_iter().zip(&trace.tokens) {
            let mut target = grads.model.embedding.row_mut(tok);
            target += &row;
        }
    }

    pub fn new_cache(&self) -> KvCache<F> {
        let cfg = &self.params.config;
        KvCache {
            keys: (0..cfg.n_layers).map(|_| Array2::zeros((cfg.max_seq_len, cfg.d_model))).collect(),
            values: (0..cfg.n_layers).map(|_| Array2::zeros((cfg.max_seq_len, cfg.d_model))).collect(),
            len: 0,
        }
    }

    /// Runs a whole prompt in one pass and returns a cache positioned after
    /// it, together with the logits of its last position.
    pub fn prefill(&self, tokens: &[u32]) -> Result<(KvCache<F>, Array1<F>)> {
        if tokens.is_empty() {
            return Err(Error::ShapeMismatch("empty prompt".into()));
        }
        let trace = self.trace(tokens)?;
        let mut cache = self.new_cache();
        let t = tokens.len();
        for (l, layer) in trace.layers.iter().enumerate() {
            cache.keys[l].slice_mut(s![..t, ..]).assign(&layer.k);
            cache.values[l].slice_mut(s![..t, ..]).assign(&layer.v);
        }
        cache.len = t;
        Ok((cache, trace.logits.row(t - 1).to_owned()))
    }

    /// Feeds one token at the next position and returns that position's
    /// logits when `want_logits` is set.
    pub fn step(&self, cache: &mut KvCache<F>, token: u32, want_logits: bool) -> Result<Option<Array1<F>>> {
        let p = self.params;
        let cfg = &p.config;
        let pos = cache.len;
        if pos >= cfg.max_seq_len {
            return Err(Error::OverlongInput { len: pos + 1, max: cfg.max_seq_len });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::ShapeMismatch(format!("token id {token} outside vocabulary")));
        }
        let dh = cfg.head_dim();
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let emb_row = p.embedding.slice(s![token as usize..token as usize + 1, ..]).to_owned();
        let (mut x, _) = self.embed_rows(&emb_row);
        x += &p.position.slice(s![pos..pos + 1, ..]);

        for (l, layer) in p.layers.iter().enumerate() {
            let (h1, _) = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
            let q = h1.dot(self.attn_weight(l, 0));
            cache.keys[l].slice_mut(s![pos..pos + 1, ..]).assign(&h1.dot(self.attn_weight(l, 1)));
            cache.values[l].slice_mut(s![pos..pos + 1, ..]).assign(&h1.dot(self.attn_weight(l, 2)));
            let mut ctx = Array2::zeros((1, cfg.d_model));
            for h in 0..cfg.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let keys: ArrayView2<'_, F> = cache.keys[l].slice(s![..=pos, cols.clone()]);
                let values: ArrayView2<'_, F> = cache.values[l].slice(s![..=pos, cols.clone()]);
                let qh = q.slice(s![0, cols.clone()]);
                let mut scores: Array1<F> = keys.dot(&qh);
                scores.mapv_inplace(|v| v * scale);
                let max = scores.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
                scores.mapv_inplace(|v| (v - max).exp());
                let sum = scores.sum();
                scores.mapv_inplace(|v| v / sum);
                ctx.slice_mut(s![0, cols]).assign(&values.t().dot(&scores));
            }
            x += &ctx.dot(self.attn_weight(l, 3));
            let (h2, _) = layer_norm(&x, &layer.ln2_gain, &layer.ln2_bias);
            let act = (h2.dot(&layer.w1) + &layer.b1).mapv(gelu);
            x += &(act.dot(&layer.w2) + &layer.b2);
        }
        cache.len += 1;
        if !want_logits {
            return Ok(None);
        }
        let (hf, _) = layer_norm(&x, &p.final_gain, &p.final_bias);
        let logits = hf.dot(&p.head) + &p.head_bias;
        Ok(Some(logits.row(0).to_owned()))
    }
}
