//! Rank-r additive factors on the attention projections, used to simulate
//! parameter-efficient user tuning.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lm::{ModelParameters, Scalar};
use crate::{Error, Result};

/// One `(A, B)` pair per attention projection (`q, k, v, o`) per layer.
/// The effective weight is `W + scale·A·B`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLora<F> {
    pub scale: F,
    pub factors: Vec<[(Array2<F>, Array2<F>); 4]>,
}

impl<F: Scalar> AttentionLora<F> {
    pub fn init(n_layers: usize, d_model: usize, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        if rank == 0 || rank > d_model {
            return Err(Error::InvalidConfig(format!("lora rank {rank} must be in 1..={d_model}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_model as f64).sqrt();
        let factors = (0..n_layers)
            .map(|_| {
                std::array::from_fn(|_| {
                    let a = Array2::from_shape_fn((d_model, rank), |_| F::lit(rng.gen_range(-bound..bound)));
                    (a, Array2::zeros((rank, d_model)))
                })
            })
            .collect();
        Ok(Self { scale: F::lit(scale), factors })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            scale: self.scale,
            factors: self
                .factors
                .iter()
                .map(|l| std::array::from_fn(|i| (Array2::zeros(l[i].0.dim()), Array2::zeros(l[i].1.dim()))))
                .collect(),
        }
    }

    /// `scale·A·B` for layer `layer`, projection `which`.
    pub fn delta(&self, layer: usize, which: usize) -> Array2<F> {
        let (a, b) = &self.factors[layer][which];
        a.dot(b) * self.scale
    }

    /// Folds the low-rank deltas into a copy of `params`.
    pub fn merge_into(&self, params: &ModelParameters<F>) -> Result<ModelParameters<F>> {
        if self.factors.len() != params.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "lora covers {} layers, model has {}",
                self.factors.len(),
                params.layers.len()
            )));
        }
        let mut out = params.clone();
        for (l, layer) in out.layers.iter_mut().enumerate() {
            for (which, w) in layer.attention_mut().into_iter().enumerate() {
                let delta = self.delta(l, which);
                if delta.dim() != w.dim() {
                    return Err(Error::ShapeMismatch("lora factor shape".into()));
                }
                *w += &delta;
            }
        }
        Ok(out)
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Array2<F>)) {
        for layer in &mut self.factors {
            for (a, b) in layer.iter_mut() {
                f(a);
                f(b);
            }
        }
    }
}
