//! Train/test partitioning and standardization of continuous columns.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{ColumnKind, TabularDataset};
use crate::error::{Error, Result};

/// Shuffled indices split into `(train, test)`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} must lie in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(n));
    Ok((idx, test))
}

pub fn split(data: &TabularDataset, train_fraction: f64, seed: u64) -> Result<(TabularDataset, TabularDataset)> {
    let (tr, te) = split_indices(data.len(), train_fraction, seed)?;
    Ok((data.select_rows(&tr), data.select_rows(&te)))
}

/// Per-column shift and scale; one-hot columns carry `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of continuous training columns.
    pub fn fit(train: &TabularDataset) -> Self {
        let x = train.features();
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        let mut scale = vec![1.0; x.cols()];
        for (j, kind) in train.column_kinds().iter().enumerate() {
            if *kind != ColumnKind::Continuous {
                continue;
            }
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            if var > 0.0 && var.is_finite() {
                scale[j] = var.sqrt();
            } else {
                log::warn!(
                    "column `{}` has zero variance; centering only",
                    train.column_names()[j]
                );
            }
        }
        Self { mean, scale }
    }

    pub fn apply(&self, data: &TabularDataset) -> Result<TabularDataset> {
        let mut x = data.features().clone();
        for i in 0..x.rows() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        data.with_features(x)
    }
}

/// Standardizes both splits with training statistics.
pub fn standardize(train: &TabularDataset, test: &TabularDataset) -> Result<(TabularDataset, TabularDataset)> {
    let s = Standardizer::fit(train);
    Ok((s.apply(train)?, s.apply(test)?))
}
