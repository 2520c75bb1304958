//! Two-Gaussian synthetic data with a sensitive attribute assigned from the
//! class-density ratio at rotated features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{ColumnKind, TabularDataset};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub mean_pos: [f64; 2],
    pub cov_pos: [[f64; 2]; 2],
    pub mean_neg: [f64; 2],
    pub cov_neg: [[f64; 2]; 2],
    /// Rotation angle in radians.
    pub rotation_phi: f64,
    pub positive_fraction: f64,
    pub seed: u64,
}

/// -70 degrees.
pub const DEFAULT_ROTATION_PHI: f64 = -7.0 * std::f64::consts::PI / 18.0;

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 10_800,
            mean_pos: [2.0, 2.0],
            cov_pos: [[5.0, 1.0], [1.0, 5.0]],
            mean_neg: [-2.0, -2.0],
            cov_neg: [[10.0, 1.0], [1.0, 3.0]],
            rotation_phi: DEFAULT_ROTATION_PHI,
            positive_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Lower Cholesky factor and log-determinant of a 2x2 SPD matrix.
#[derive(Debug, Clone, Copy)]
struct Gauss2 {
    mean: [f64; 2],
    l11: f64,
    l21: f64,
    l22: f64,
}

impl Gauss2 {
    fn new(mean: [f64; 2], cov: [[f64; 2]; 2], which: &str) -> Result<Self> {
        let [[a, b], [c, d]] = cov;
        if !(a.is_finite() && b.is_finite() && d.is_finite()) || b != c {
            return Err(Error::Config(format!("{which} covariance must be finite and symmetric")));
        }
        if a <= 0.0 || a * d - b * b <= 0.0 {
            return Err(Error::Config(format!("{which} covariance is not positive-definite")));
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).sqrt();
        Ok(Self { mean, l11, l21, l22 })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        [
            self.mean[0] + self.l11 * e0,
            self.mean[1] + self.l21 * e0 + self.l22 * e1,
        ]
    }

    fn log_density(&self, x: [f64; 2]) -> f64 {
        // Solve L u = x - mean.
        let u0 = (x[0] - self.mean[0]) / self.l11;
        let u1 = (x[1] - self.mean[1] - self.l21 * u0) / self.l22;
        let log_det = 2.0 * (self.l11.ln() + self.l22.ln());
        -0.5 * (u0 * u0 + u1 * u1) - 0.5 * log_det - (2.0 * std::f64::consts::PI).ln()
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("synthetic n must be positive".into()));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config("positive_fraction must lie in (0, 1)".into()));
        }
        if !self.rotation_phi.is_finite() {
            return Err(Error::Config("rotation_phi must be finite".into()));
        }
        Gauss2::new(self.mean_pos, self.cov_pos, "positive-class")?;
        Gauss2::new(self.mean_neg, self.cov_neg, "negative-class")?;
        Ok(())
    }

    /// Probability that a point belongs to the protected group.
    pub fn protected_probability(&self, x: [f64; 2]) -> Result<f64> {
        let pos = Gauss2::new(self.mean_pos, self.cov_pos, "positive-class")?;
        let neg = Gauss2::new(self.mean_neg, self.cov_neg, "negative-class")?;
        Ok(density_ratio(&pos, &neg, rotate(x, self.rotation_phi)))
    }
}

fn rotate(x: [f64; 2], phi: f64) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// `p1 / (p1 + p0)` computed in log space.
fn density_ratio(pos: &Gauss2, neg: &Gauss2, x: [f64; 2]) -> f64 {
    sigmoid(pos.log_density(x) - neg.log_density(x))
}

/// Draws `n` labelled points; ideal and observed labels are the class labels.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TabularDataset> {
    spec.validate()?;
    let pos = Gauss2::new(spec.mean_pos, spec.cov_pos, "positive-class")?;
    let neg = Gauss2::new(spec.mean_neg, spec.cov_neg, "negative-class")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_pos = ((spec.n as f64) * spec.positive_fraction).round() as usize;
    let mut data = Vec::with_capacity(2 * spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y = (i < n_pos) as u8;
        let x = if y == 1 { pos.sample(&mut rng) } else { neg.sample(&mut rng) };
        data.extend_from_slice(&x);
        labels.push(y);
    }
    let mut sensitive = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let x = [data[2 * i], data[2 * i + 1]];
        let p = density_ratio(&pos, &neg, rotate(x, spec.rotation_phi));
        let u: f64 = rng.random();
        sensitive.push((u < p) as u8);
    }
    TabularDataset::new(
        Matrix::from_vec(spec.n, 2, data)?,
        vec!["x0".into(), "x1".into()],
        vec![ColumnKind::Continuous; 2],
        sensitive,
        vec!["a".into()],
        labels.clone(),
        Some(labels),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_spd_covariance() {
        let spec = SyntheticSpec {
            cov_pos: [[1.0, 2.0], [2.0, 1.0]],
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let spec = SyntheticSpec {
            cov_neg: [[1.0, 0.5], [0.4, 1.0]],
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn log_density_matches_closed_form() {
        let g = Gauss2::new([1.0, -1.0], [[4.0, 1.0], [1.0, 2.0]], "t").unwrap();
        let x = [0.5, 0.25];
        let det: f64 = 4.0 * 2.0 - 1.0;
        let (dx, dy) = (x[0] - 1.0, x[1] + 1.0);
        // Inverse of [[4,1],[1,2]] is [[2,-1],[-1,4]] / 7.
        let q = (2.0 * dx * dx - 2.0 * dx * dy + 4.0 * dy * dy) / det;
        let expect = -0.5 * q - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
        assert!((g.log_density(x) - expect).abs() < 1e-12);
    }

    #[test]
    fn symmetric_classes_give_even_odds() {
        let spec = SyntheticSpec {
            mean_neg: [2.0, 2.0],
            cov_neg: [[5.0, 1.0], [1.0, 5.0]],
            rotation_phi: 0.0,
            ..SyntheticSpec::default()
        };
        assert_eq!(spec.protected_probability([0.3, -4.0]).unwrap(), 0.5);
        let d = generate_synthetic(&spec).unwrap();
        let ones = d.sensitive_bits().iter().filter(|&&b| b == 1).count() as f64;
        let n = d.len() as f64;
        assert!((ones - n / 2.0).abs() < 3.0 * (n * 0.25).sqrt());
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = SyntheticSpec {
            n: 500,
            seed: 9,
            ..SyntheticSpec::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }
}
