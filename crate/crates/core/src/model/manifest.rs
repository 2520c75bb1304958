use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::objective::{Hyperparams, TcMode, TermMask};
use super::params::{ArchConfig, ModelParams, NETWORKS};
use crate::error::Result;

/// Human-readable summary of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub input_dim: usize,
    pub sensitive_dim: usize,
    pub onehot_columns: usize,
    pub arch: ArchConfig,
    pub hyper: Hyperparams,
    pub mask: TermMask,
    pub tc_mode: TcMode,
    pub parameter_count: usize,
    /// Parameter count per network.
    pub networks: BTreeMap<String, usize>,
}

impl ModelManifest {
    pub fn new(params: &ModelParams, hyper: Hyperparams, mask: TermMask, tc_mode: TcMode) -> Self {
        Self {
            input_dim: params.input_dim(),
            sensitive_dim: params.sensitive_dim,
            onehot_columns: params.onehot.iter().filter(|&&b| b).count(),
            arch: params.arch,
            hyper,
            mask,
            tc_mode,
            parameter_count: params.parameter_count(),
            networks: NETWORKS
                .iter()
                .zip(params.networks())
                .map(|(n, m)| (n.to_string(), m.parameter_count()))
                .collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}
