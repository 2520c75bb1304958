//! Scalar loss functions used by every model in the crate.

use crate::error::{check_dim, Result};

use super::dense::sigmoid;

/// `-t log σ(l) - (1 - t) log(1 - σ(l))` in a form that never overflows.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Derivative of [`bce_with_logit`] w.r.t. the logit.
#[inline]
pub fn bce_with_logit_grad(logit: f64, target: f64) -> f64 {
    sigmoid(logit) - target
}

/// Weighted mean binary cross-entropy over examples.
pub fn binary_cross_entropy(logits: &[f64], targets: &[f64], weights: &[f64]) -> Result<f64> {
    check_dim("bce targets", logits.len(), targets.len())?;
    check_dim("bce weights", logits.len(), weights.len())?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((&l, &t), &w)| if w == 0.0 { 0.0 } else { w * bce_with_logit(l, t) })
        .sum();
    Ok(total / logits.len() as f64)
}

/// Gradient of [`binary_cross_entropy`] w.r.t. each logit.
pub fn binary_cross_entropy_grad(logits: &[f64], targets: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((&l, &t), &w)| w * bce_with_logit_grad(l, t) / n)
        .collect()
}

/// `0.5 * Σ (predicted - target)²`: unit-variance Gaussian negative
/// log-likelihood without its constant.
pub fn gaussian_recon_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    check_dim("reconstruction target", predicted.len(), target.len())?;
    Ok(0.5
        * predicted
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>())
}

pub fn gaussian_recon_grad(predicted: &[f64], target: &[f64]) -> Vec<f64> {
    predicted.iter().zip(target).map(|(p, t)| p - t).collect()
}
