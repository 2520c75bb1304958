use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::LogisticConfig;
use crate::data::{
    generate_synthetic, inject_label_bias, load_dump, load_tabular, split, standardize, CorruptionSpec,
    GroupSelector, Schema, SyntheticSpec, TabularDataset,
};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, Hyperparams, TermMask};
use crate::trainer::{FitSpec, TrainConfig};

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Raw `adult.data`; a relative path resolves against the data directory.
    Adult { path: Option<PathBuf> },
    /// Raw `compas-scores-two-years.csv`.
    Compas { path: Option<PathBuf> },
    /// Canonical dump written by `prepare` or `synth`.
    Dump { name: String, path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

impl DataSource {
    pub fn name(&self) -> &str {
        match self {
            DataSource::Synthetic(_) => "synthetic",
            DataSource::Adult { .. } => "adult",
            DataSource::Compas { .. } => "compas",
            DataSource::Dump { name, .. } => name,
        }
    }

    /// Default file name of the raw download.
    pub fn default_file(&self) -> Option<&'static str> {
        match self {
            DataSource::Adult { .. } => Some("adult.data"),
            DataSource::Compas { .. } => Some("compas-scores-two-years.csv"),
            _ => None,
        }
    }

    pub fn resolve_path(&self, data_dir: Option<&Path>) -> Option<PathBuf> {
        let given = match self {
            DataSource::Synthetic(_) => return None,
            DataSource::Adult { path } | DataSource::Compas { path } => path.clone(),
            DataSource::Dump { path, .. } => Some(path.clone()),
        };
        let p = given.or_else(|| self.default_file().map(PathBuf::from))?;
        Some(match data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        })
    }

    pub fn load(&self, data_dir: Option<&Path>) -> Result<TabularDataset> {
        match self {
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::Adult { .. } => load_tabular(&self.resolve_path(data_dir).expect("file source"), &Schema::adult()),
            DataSource::Compas { .. } => {
                load_tabular(&self.resolve_path(data_dir).expect("file source"), &Schema::compas())
            }
            DataSource::Dump { .. } => load_dump(&self.resolve_path(data_dir).expect("file source")),
        }
    }
}

/// Label-noise dependent `beta`: `low` below `threshold`, `high` from it on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub threshold: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            threshold: 0.35,
            low: 0.1,
            high: 0.5,
        }
    }
}

impl BetaSchedule {
    pub fn beta(&self, rho: f64) -> f64 {
        if rho >= self.threshold {
            self.high
        } else {
            self.low
        }
    }
}

/// Everything that determines a run's numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub group: GroupSelector,
    pub train_fraction: f64,
    pub arch: ArchConfig,
    pub hyper: Hyperparams,
    pub mask: TermMask,
    /// Overrides `hyper.beta` per noise level when set.
    pub beta_schedule: Option<BetaSchedule>,
    pub train: TrainConfig,
    pub logistic: LogisticConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            group: GroupSelector::Column(0),
            train_fraction: 0.9,
            arch: ArchConfig::synthetic(),
            hyper: Hyperparams::default(),
            mask: TermMask::full(),
            beta_schedule: Some(BetaSchedule::default()),
            train: TrainConfig::default(),
            logistic: LogisticConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the tabular datasets: larger latents.
    pub fn for_source(data: DataSource) -> Self {
        let arch = match data {
            DataSource::Synthetic(_) => ArchConfig::synthetic(),
            _ => ArchConfig::default(),
        };
        Self {
            data,
            arch,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} not in (0, 1)", self.train_fraction)));
        }
        self.arch.validate()?;
        self.hyper.validate()?;
        if let Some(s) = self.beta_schedule {
            for b in [s.low, s.high] {
                if !(0.0..=1.0).contains(&b) {
                    return Err(Error::Config(format!("scheduled beta {b} not in [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Hyperparameters in effect at noise level `rho`.
    pub fn hyper_at(&self, rho: f64) -> Hyperparams {
        let mut h = self.hyper;
        if let Some(s) = self.beta_schedule {
            h.beta = s.beta(rho);
        }
        h
    }

    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed.wrapping_add(fold as u64)
    }

    pub fn fit_spec(&self, rho: f64, fold: usize) -> FitSpec {
        FitSpec {
            train: TrainConfig {
                seed: self.fold_seed(fold),
                ..self.train
            },
            hyper: self.hyper_at(rho),
            mask: self.mask,
            group: self.group,
        }
    }

    pub fn logistic_at(&self, fold: usize) -> LogisticConfig {
        LogisticConfig {
            seed: self.fold_seed(fold),
            ..self.logistic
        }
    }
}

/// Standardized train/test split of one fold with corrupted training labels.
/// The test split keeps clean labels.
#[derive(Debug, Clone)]
pub struct Fold {
    pub train: TabularDataset,
    pub test: TabularDataset,
}

pub fn prepare_fold(cfg: &ExperimentConfig, base: &TabularDataset, rho: f64, fold: usize) -> Result<Fold> {
    let seed = cfg.fold_seed(fold);
    let base = if base.ideal_labels().is_some() {
        base.clone()
    } else {
        base.clone().with_observed_as_ideal()
    };
    let (train, test) = split(&base, cfg.train_fraction, seed)?;
    let (train, test) = standardize(&train, &test)?;
    let train = inject_label_bias(&train, &CorruptionSpec::symmetric(rho, seed), cfg.group)?;
    Ok(Fold { train, test })
}
