//! Diagonal Gaussian heads, the reparameterized sampler and the closed-form
//! KL divergence to a standard normal prior.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Mean and (clamped) log-variance of a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianHead {
    /// Builds a head, clamping `log_var` into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    /// NaN log-variances are mapped to the lower bound.
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        check_dim("gaussian head", mu.len(), log_var.len())?;
        let log_var = log_var.into_iter().map(clamp_log_var).collect();
        Ok(Self { mu, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[inline]
pub fn clamp_log_var(v: f64) -> f64 {
    if v.is_nan() {
        LOG_VAR_MIN
    } else {
        v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    }
}

/// Whether gradient flows through the clamp at the raw (pre-clamp) value.
#[inline]
pub fn clamp_passes_gradient(raw: f64) -> bool {
    (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw)
}

/// `mu + exp(0.5 * log_var) * noise`.
pub fn reparameterize(head: &GaussianHead, noise: &[f64]) -> Result<Vec<f64>> {
    check_dim("reparameterize noise", head.dim(), noise.len())?;
    Ok(head
        .mu
        .iter()
        .zip(&head.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Gradients of a scalar loss w.r.t. `mu` and `log_var`, given its gradient
/// w.r.t. the reparameterized sample. Noise receives no gradient.
pub fn reparameterize_backward(
    head: &GaussianHead,
    noise: &[f64],
    d_sample: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d_mu = d_sample.to_vec();
    let d_log_var = head
        .log_var
        .iter()
        .zip(noise)
        .zip(d_sample)
        .map(|((lv, e), d)| d * 0.5 * (0.5 * lv).exp() * e)
        .collect();
    (d_mu, d_log_var)
}

/// `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn gaussian_kl(head: &GaussianHead) -> f64 {
    0.5 * head
        .mu
        .iter()
        .zip(&head.log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Gradient of [`gaussian_kl`] w.r.t. `(mu, log_var)`.
pub fn gaussian_kl_grad(head: &GaussianHead) -> (Vec<f64>, Vec<f64>) {
    let d_mu = head.mu.clone();
    let d_lv = head.log_var.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect();
    (d_mu, d_lv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scale_sample_equals_noise() {
        let h = GaussianHead::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(reparameterize(&h, &[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    // The floor sd is exp(-5) ~ 6.7e-3, so the 1e-2 band holds for |noise| < 1.49.
    fn vanishing_variance_returns_mean() {
        let h = GaussianHead::new(vec![2.0, 2.0], vec![f64::NEG_INFINITY, -1e6]).unwrap();
        assert_eq!(h.log_var, vec![-10.0, -10.0]);
        let s = reparameterize(&h, &[1.0, -1.4]).unwrap();
        assert!(s.iter().all(|v| (v - 2.0).abs() < 1e-2));
    }

    #[test]
    fn noise_length_must_match() {
        let h = GaussianHead::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(reparameterize(&h, &[0.0; 2]).is_err());
        assert!(GaussianHead::new(vec![0.0; 3], vec![0.0; 2]).is_err());
    }

    #[test]
    fn kl_closed_form_values() {
        let h = GaussianHead::new(vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(gaussian_kl(&h), 0.0);
        let h = GaussianHead::new(vec![1.0], vec![0.0]).unwrap();
        assert!((gaussian_kl(&h) - 0.5).abs() < 1e-15);
    }
}
