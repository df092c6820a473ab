//! Shared mini-batch loop used by every training entry point.

use crate::data::EncodedInstance;
use crate::lm::loss::accumulate_loss;
use crate::lm::{GradScope, Gradients, ModelParameters, Network, ParamGroup};
use crate::Result;

use super::adapter::FAdapter;
use super::lora::AttentionLora;
use super::optim::{Adam, Slot};

/// Everything a run may update.
pub(crate) struct State {
    pub params: ModelParameters<f32>,
    pub adapter: Option<FAdapter<f32>>,
    pub lora: Option<AttentionLora<f32>>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StepSettings {
    pub scope: GradScope,
    pub lr: f64,
    /// Learning rate of the token embedding.
    pub embedding_lr: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
}

impl State {
    pub fn network(&self) -> Network<'_, f32> {
        let mut net = Network::new(&self.params);
        if let Some(a) = &self.adapter {
            net = net.with_adapter(a);
        }
        if let Some(l) = &self.lora {
            net = net.with_lora(l);
        }
        net
    }

    /// One optimizer step on the mean of per-instance mean losses; returns
    /// that mean loss.
    pub fn step(&mut self, adam: &mut Adam, batch: &[&EncodedInstance], settings: StepSettings) -> Result<f64> {
        let weight = 1.0 / batch.len() as f64;
        let (loss, mut grads) = {
            let net = self.network();
            let mut grads = Gradients::zeros(&net, settings.scope)?;
            let mut loss = 0.0;
            for ex in batch {
                let (l, _) = accumulate_loss(&net, &ex.tokens.ids, &ex.mask, settings.scope, weight, Some(&mut grads))?;
                loss += l * weight;
            }
            (loss, grads)
        };
        if !loss.is_finite() {
            return Ok(loss);
        }
        if settings.grad_clip > 0.0 {
            let norm = grads.squared_norm().sqrt();
            if norm > settings.grad_clip {
                grads.scale((settings.grad_clip / norm) as f32);
            }
        }
        adam.update(self.slots(&grads, settings));
        Ok(loss)
    }

    fn slots<'a>(&'a mut self, grads: &'a Gradients<f32>, settings: StepSettings) -> Vec<Slot<'a>> {
        let mut slots = Vec::new();
        for ((_, group, param), (_, _, grad)) in self.params.named_mut().into_iter().zip(grads.model.named()) {
            let lr = match (settings.scope, group) {
                (GradScope::AttentionLowRank, _) => continue,
                (_, ParamGroup::Embedding) => settings.embedding_lr,
                (GradScope::All, _) => settings.lr,
                _ => continue,
            };
            slots.push(Slot { param, grad, lr });
        }
        if let (Some(a), Some(g)) = (self.adapter.as_mut(), grads.adapter.as_ref()) {
            slots.push(Slot { param: a.a.view_mut().into_dyn(), grad: g.a.view().into_dyn(), lr: settings.lr });
            slots.push(Slot { param: a.b.view_mut().into_dyn(), grad: g.b.view().into_dyn(), lr: settings.lr });
        }
        if let (Some(l), Some(g)) = (self.lora.as_mut(), grads.lora.as_ref()) {
            for (layer, glayer) in l.factors.iter_mut().zip(&g.factors) {
                for ((a, b), (ga, gb)) in layer.iter_mut().zip(glayer) {
                    slots.push(Slot { param: a.view_mut().into_dyn(), grad: ga.view().into_dyn(), lr: settings.lr });
                    slots.push(Slot { param: b.view_mut().into_dyn(), grad: gb.view().into_dyn(), lr: settings.lr });
                }
            }
        }
        slots
    }
}

/// Token-weighted mean negative log-likelihood over `examples`.
pub fn mean_token_nll(net: &Network<'_, f32>, examples: &[EncodedInstance]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for ex in examples {
        let (loss, n) = accumulate_loss(net, &ex.tokens.ids, &ex.mask, GradScope::All, 1.0, None)?;
        total += loss * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}
