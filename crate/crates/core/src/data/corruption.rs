//! Group-conditional label flipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{GroupSelector, TabularDataset};
use crate::error::{Error, Result};

/// `rho0 = p(y=0 | y_m=1, a=1)`, `rho1 = p(y=1 | y_m=0, a=0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub rho0: f64,
    pub rho1: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn symmetric(rho: f64, seed: u64) -> Self {
        Self {
            rho0: rho,
            rho1: rho,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("rho0", self.rho0), ("rho1", self.rho1)] {
            if !(0.0..0.5).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} must lie in [0, 0.5)")));
            }
        }
        Ok(())
    }
}

/// Flips observed labels starting from the ideal labels: protected positives
/// become 0 with probability `rho0`, privileged negatives become 1 with
/// probability `rho1`. One uniform draw per row keeps the outcome of a row
/// independent of the rates used for other cells.
pub fn inject_label_bias(
    data: &TabularDataset,
    spec: &CorruptionSpec,
    group: GroupSelector,
) -> Result<TabularDataset> {
    spec.validate()?;
    let ideal = data
        .ideal_labels()
        .ok_or_else(|| Error::Config("label corruption needs ideal labels".into()))?;
    let a = data.protected(group)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let observed = ideal
        .iter()
        .zip(&a)
        .map(|(&y, &g)| {
            let u: f64 = rng.random();
            match (g, y) {
                (1, 1) if u < spec.rho0 => 0,
                (0, 0) if u < spec.rho1 => 1,
                _ => y,
            }
        })
        .collect();
    data.with_observed_labels(observed)
}
