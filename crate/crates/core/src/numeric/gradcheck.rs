use crate::error::{Error, Result};

/// Denominator floor for the relative error, so parameters whose true
/// gradient is (near) zero are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Index of the parameter with the worst error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient returned by `loss_fn` with central finite
/// differences at step `epsilon`, for every parameter.
///
/// `loss_fn` returns `(loss, gradient)` and must be deterministic.
pub fn grad_check<F>(loss_fn: F, params: &[f64], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    grad_check_subset(loss_fn, params, epsilon, &(0..params.len()).collect::<Vec<_>>())
}

/// Like [`grad_check`] but only probes the listed parameter indices.
pub fn grad_check_subset<F>(
    loss_fn: F,
    params: &[f64],
    epsilon: f64,
    indices: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (base, grad) = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite { term: "grad_check loss" });
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = params.to_vec();
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let (up, _) = loss_fn(&probe)?;
        probe[i] = orig - epsilon;
        let (down, _) = loss_fn(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { term: "grad_check loss" });
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let err = (analytic - numeric).abs() / denom;
        if err > report.max_relative_error {
            report = GradCheckReport {
                max_relative_error: err,
                worst_index: i,
                analytic,
                numeric,
            };
        }
    }
    Ok(report)
}
