//! Masked next-token cross-entropy.

use ndarray::Array2;

use super::network::{GradScope, Gradients, Network};
use super::Scalar;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LossOutput<F> {
    /// Mean negative log-likelihood over masked-in positions.
    pub loss: f64,
    /// Number of masked-in positions.
    pub positions: usize,
    pub gradients: Gradients<F>,
}

fn validate(len: usize, targets: &[u32], mask: &[bool]) -> Result<usize> {
    if mask.len() != len || targets.len() != len {
        return Err(Error::InvalidMask(format!(
            "{} inputs but {} targets and {} mask entries",
            len,
            targets.len(),
            mask.len()
        )));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

/// Returns the mean NLL and `∂loss/∂logits`.
fn masked_nll<F: Scalar>(logits: &Array2<F>, targets: &[u32], mask: &[bool], count: usize) -> (f64, Array2<F>) {
    let mut dlogits = Array2::zeros(logits.dim());
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for (t, row) in logits.rows().into_iter().enumerate() {
        if !mask[t] {
            continue;
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
        let sum: f64 = row.iter().map(|&v| (v.as_f64() - max).exp()).sum();
        let lse = max + sum.ln();
        let target = targets[t] as usize;
        total += lse - row[target].as_f64();
        let mut drow = dlogits.row_mut(t);
        for (j, (&v, d)) in row.iter().zip(drow.iter_mut()).enumerate() {
            let p = (v.as_f64() - lse).exp();
            let onehot = if j == target { 1.0 } else { 0.0 };
            *d = F::lit((p - onehot) * inv);
        }
    }
    (total * inv, dlogits)
}

fn shifted_targets(tokens: &[u32], mask: &[bool]) -> Result<Vec<u32>> {
    if mask.last() == Some(&true) {
        return Err(Error::InvalidMask("the last position has no next token".into()));
    }
    let mut targets: Vec<u32> = tokens.iter().skip(1).copied().collect();
    targets.push(0);
    Ok(targets)
}

/// Loss where position `t` predicts `targets[t]`.
pub fn causal_lm_loss_with_targets<F: Scalar>(
    net: &Network<'_, F>,
    inputs: &[u32],
    targets: &[u32],
    mask: &[bool],
    scope: GradScope,
) -> Result<LossOutput<F>> {
    let count = validate(inputs.len(), targets, mask)?;
    let trace = net.trace(inputs)?;
    let (loss, dlogits) = masked_nll(&trace.logits, targets, mask, count);
    let mut gradients = Gradients::zeros(net, scope)?;
    net.backward(&trace, &dlogits, scope, &mut gradients);
    Ok(LossOutput { loss, positions: count, gradients })
}

/// Loss of `tokens` where `mask[t]` selects the prediction of `tokens[t + 1]`.
pub fn causal_lm_loss<F: Scalar>(
    net: &Network<'_, F>,
    tokens: &[u32],
    mask: &[bool],
    scope: GradScope,
) -> Result<LossOutput<F>> {
    let targets = shifted_targets(tokens, mask)?;
    causal_lm_loss_with_targets(net, tokens, &targets, mask, scope)
}

/// Forward-only variant of [`causal_lm_loss`]; accumulates gradients into
/// `grads` when given.
pub fn accumulate_loss<F: Scalar>(
    net: &Network<'_, F>,
    tokens: &[u32],
    mask: &[bool],
    scope: GradScope,
    weight: f64,
    grads: Option<&mut Gradients<F>>,
) -> Result<(f64, usize)> {
    let targets = shifted_targets(tokens, mask)?;
    let count = validate(tokens.len(), &targets, mask)?;
    let trace = net.trace(tokens)?;
    let (loss, mut dlogits) = masked_nll(&trace.logits, &targets, mask, count);
    if let Some(g) = grads {
        if weight != 1.0 {
            let w = F::lit(weight);
            dlogits.mapv_inplace(|d| d * w);
        }
        net.backward(&trace, &dlogits, scope, g);
    }
    Ok((loss, count))
}

pub fn loss_value<F: Scalar>(net: &Network<'_, F>, tokens: &[u32], mask: &[bool]) -> Result<f64> {
    accumulate_loss(net, tokens, mask, GradScope::All, 1.0, None).map(|(l, _)| l)
}
