use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Scalar};
use crate::{Error, Result};

const INIT_STD: f64 = 0.02;

/// Which side of the `θ_E` / `θ_n` partition a tensor lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Token embedding rows.
    Embedding,
    /// Attention projections (the only tensors touched by low-rank user tuning).
    Attention,
    /// Every other non-embedding tensor, output head included.
    Other,
}

impl ParamGroup {
    pub fn is_embedding(self) -> bool {
        self == ParamGroup::Embedding
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

/// All trainable tensors of the model. Weight matrices are stored
/// `in × out` so a row of activations multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<F> {
    pub config: ModelConfig,
    pub embedding: Array2<F>,
    pub position: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub final_gain: Array1<F>,
    pub final_bias: Array1<F>,
    pub head: Array2<F>,
    pub head_bias: Array1<F>,
}

fn layer_tensor_names(i: usize) -> [(String, ParamGroup); 12] {
    let n = |s: &str| format!("layers.{i}.{s}");
    [
        (n("ln1.gain"), ParamGroup::Other),
        (n("ln1.bias"), ParamGroup::Other),
        (n("attn.wq"), ParamGroup::Attention),
        (n("attn.wk"), ParamGroup::Attention),
        (n("attn.wv"), ParamGroup::Attention),
        (n("attn.wo"), ParamGroup::Attention),
        (n("ln2.gain"), ParamGroup::Other),
        (n("ln2.bias"), ParamGroup::Other),
        (n("ffn.w1"), ParamGroup::Other),
        (n("ffn.b1"), ParamGroup::Other),
        (n("ffn.w2"), ParamGroup::Other),
        (n("ffn.b2"), ParamGroup::Other),
    ]
}

impl<F: Scalar> LayerParams<F> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        Self {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            w1: Array2::zeros((d, ff)),
            b1: Array1::zeros(ff),
            w2: Array2::zeros((ff, d)),
            b2: Array1::zeros(d),
        }
    }

    fn views(&self) -> [ArrayViewD<'_, F>; 12] {
        [
            self.ln1_gain.view().into_dyn(),
            self.ln1_bias.view().into_dyn(),
            self.wq.view().into_dyn(),
            self.wk.view().into_dyn(),
            self.wv.view().into_dyn(),
            self.wo.view().into_dyn(),
            self.ln2_gain.view().into_dyn(),
            self.ln2_bias.view().into_dyn(),
            self.w1.view().into_dyn(),
            self.b1.view().into_dyn(),
            self.w2.view().into_dyn(),
            self.b2.view().into_dyn(),
        ]
    }

    fn views_mut(&mut self) -> [ArrayViewMutD<'_, F>; 12] {
        [
            self.ln1_gain.view_mut().into_dyn(),
            self.ln1_bias.view_mut().into_dyn(),
            self.wq.view_mut().into_dyn(),
            self.wk.view_mut().into_dyn(),
            self.wv.view_mut().into_dyn(),
            self.wo.view_mut().into_dyn(),
            self.ln2_gain.view_mut().into_dyn(),
            self.ln2_bias.view_mut().into_dyn(),
            self.w1.view_mut().into_dyn(),
            self.b1.view_mut().into_dyn(),
            self.w2.view_mut().into_dyn(),
            self.b2.view_mut().into_dyn(),
        ]
    }

    /// The four attention projections in `q, k, v, o` order.
    pub fn attention(&self) -> [&Array2<F>; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    pub fn attention_mut(&mut self) -> [&mut Array2<F>; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

impl<F: Scalar> ModelParameters<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (v, d) = (config.vocab_size, config.d_model);
        Self {
            config: config.clone(),
            embedding: Array2::zeros((v, d)),
            position: Array2::zeros((config.max_seq_len, d)),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(config)).collect(),
            final_gain: Array1::zeros(d),
            final_bias: Array1::zeros(d),
            head: Array2::zeros((d, v)),
            head_bias: Array1::zeros(v),
        }
    }

    /// GPT-2 style initialization seeded from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let residual = Normal::new(0.0, INIT_STD / (2.0 * config.n_layers as f64).sqrt())
            .expect("valid std");
        let mut p = Self::zeros(config);
        let mut fill = |a: &mut ArrayViewMutD<'_, F>, dist: &Normal<f64>| {
            a.iter_mut().for_each(|x| *x = F::lit(dist.sample(&mut rng)));
        };
        fill(&mut p.embedding.view_mut().into_dyn(), &normal);
        fill(&mut p.position.view_mut().into_dyn(), &normal);
        for layer in &mut p.layers {
            layer.ln1_gain.fill(F::one());
            layer.ln2_gain.fill(F::one());
            fill(&mut layer.wq.view_mut().into_dyn(), &normal);
            fill(&mut layer.wk.view_mut().into_dyn(), &normal);
            fill(&mut layer.wv.view_mut().into_dyn(), &normal);
            fill(&mut layer.wo.view_mut().into_dyn(), &residual);
            fill(&mut layer.w1.view_mut().into_dyn(), &normal);
            fill(&mut layer.w2.view_mut().into_dyn(), &residual);
        }
        p.final_gain.fill(F::one());
        fill(&mut p.head.view_mut().into_dyn(), &normal);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Canonical tensor names in serialization order, with their group.
    pub fn tensor_names(config: &ModelConfig) -> Vec<(String, ParamGroup)> {
        let mut names = vec![
            ("tok_embedding".to_string(), ParamGroup::Embedding),
            ("pos_embedding".to_string(), ParamGroup::Other),
        ];
        for i in 0..config.n_layers {
            names.extend(layer_tensor_names(i));
        }
        names.push(("final_norm.gain".into(), ParamGroup::Other));
        names.push(("final_norm.bias".into(), ParamGroup::Other));
        names.push(("head.weight".into(), ParamGroup::Other));
        names.push(("head.bias".into(), ParamGroup::Other));
        names
    }

    /// Views of every tensor, aligned with [`ModelParameters::tensor_names`].
    pub fn views(&self) -> Vec<ArrayViewD<'_, F>> {
        let mut out = vec![self.embedding.view().into_dyn(), self.position.view().into_dyn()];
        for layer in &self.layers {
            out.extend(layer.views());
        }
        out.push(self.final_gain.view().into_dyn());
        out.push(self.final_bias.view().into_dyn());
        out.push(self.head.view().into_dyn());
        out.push(self.head_bias.view().into_dyn());
        out
    }

    pub fn views_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = vec![self.embedding.view_mut().into_dyn(), self.position.view_mut().into_dyn()];
        for layer in &mut self.layers {
            out.extend(layer.views_mut());
        }
        out.push(self.final_gain.view_mut().into_dyn());
        out.push(self.final_bias.view_mut().into_dyn());
        out.push(self.head.view_mut().into_dyn());
        out.push(self.head_bias.view_mut().into_dyn());
        out
    }

    /// `(name, group, view)` for every tensor.
    pub fn named(&self) -> Vec<(String, ParamGroup, ArrayViewD<'_, F>)> {
        Self::tensor_names(&self.config)
            .into_iter()
            .zip(self.views())
            .map(|((n, g), v)| (n, g, v))
            .collect()
    }

    pub fn named_mut(&mut self) -> Vec<(String, ParamGroup, ArrayViewMutD<'_, F>)> {
        let names = Self::tensor_names(&self.config);
        names.into_iter().zip(self.views_mut()).map(|((n, g), v)| (n, g, v)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.views().iter().map(|v| v.len()).sum()
    }

    /// Checks that every tensor has the shape implied by `config`.
    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let reference = Self::zeros(&self.config);
        if self.layers.len() != self.config.n_layers {
            return Err(Error::ShapeMismatch(format!(
                "config declares {} layers, parameters hold {}",
                self.config.n_layers,
                self.layers.len()
            )));
        }
        for ((name, _, have), want) in self.named().iter().zip(reference.views()) {
            if have.shape() != want.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    want.shape(),
                    have.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.views().iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// SHA-256 over the little-endian bytes of every tensor in `groups`,
    /// in canonical order. Used to assert freeze contracts bitwise.
    pub fn checksum(&self, groups: &[ParamGroup]) -> String {
        let mut h = Sha256::new();
        for (name, group, view) in self.named() {
            if !groups.contains(&group) {
                continue;
            }
            h.update(name.as_bytes());
            for x in view.iter() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn embedding_checksum(&self) -> String {
        self.checksum(&[ParamGroup::Embedding])
    }

    pub fn non_embedding_checksum(&self) -> String {
        self.checksum(&[ParamGroup::Attention, ParamGroup::Other])
    }

    pub fn full_checksum(&self) -> String {
        self.checksum(&[ParamGroup::Embedding, ParamGroup::Attention, ParamGroup::Other])
    }

    pub fn cast<G: Scalar>(&self) -> ModelParameters<G> {
        let mut out = ModelParameters::<G>::zeros(&self.config);
        for (src, mut dst) in self.views().into_iter().zip(out.views_mut()) {
            dst.zip_mut_with(&src, |d, &s| *d = G::lit(s.as_f64()));
        }
        out
    }

    /// Replaces the token embedding, keeping every `θ_n` tensor.
    pub fn with_embedding(&self, embedding: &Array2<F>) -> Result<Self> {
        if embedding.dim() != self.embedding.dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding {:?} does not fit model embedding {:?}",
                embedding.dim(),
                self.embedding.dim()
            )));
        }
        let mut out = self.clone();
        out.embedding.assign(embedding);
        Ok(out)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn scaled_add(&mut self, scale: F, other: &Self) {
        for (mut a, b) in self.views_mut().into_iter().zip(other.views()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn fill_zero(&mut self) {
        for mut v in self.views_mut() {
            v.fill(F::zero());
        }
    }
}
