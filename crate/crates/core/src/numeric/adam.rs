use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Adaptive-moment optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay1: 0.9,
            decay2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(self, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !in_unit(self.decay1) || !in_unit(self.decay2) {
            return Err(Error::Config("adam decays must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

impl OptimizerState {
    /// Zero moments for tensors of the given lengths.
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            first_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
            learning_rate: config.learning_rate,
            decay1: config.decay1,
            decay2: config.decay2,
            epsilon: config.epsilon,
        })
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimizerState) -> Result<()> {
    check_dim("adam tensor count", state.first_moment.len(), params.len())?;
    check_dim("adam gradient count", params.len(), grads.len())?;
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        check_dim("adam tensor", m.len(), p.len())?;
        check_dim("adam gradient", p.len(), g.len())?;
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.decay1, state.decay2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lr: f64) -> OptimizerState {
        OptimizerState::new(AdamConfig::default().with_learning_rate(lr), &[1]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = [1.5];
        let mut st = single(0.1);
        for _ in 0..10 {
            adam_step(&mut [&mut w], &[&[0.0]], &mut st).unwrap();
        }
        assert_eq!(w, [1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = [0.0];
        let mut st = single(0.1);
        adam_step(&mut [&mut w], &[&[1.0]], &mut st).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 3)^2, minimum at 3.
        let mut w = [0.0];
        let mut st = single(0.1);
        for _ in 0..500 {
            let g = 2.0 * (w[0] - 3.0);
            adam_step(&mut [&mut w], &[&[g]], &mut st).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(OptimizerState::new(AdamConfig::default().with_learning_rate(0.0), &[1]).is_err());
        let bad = AdamConfig {
            decay1: 1.0,
            ..AdamConfig::default()
        };
        assert!(OptimizerState::new(bad, &[1]).is_err());
    }
}
