//! Versioned structured-text checkpoints.
//!
//! Tensors are stored as JSON numbers using shortest round-trip formatting, so
//! a save/load cycle reproduces every finite `f64` bit for bit.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dbrf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let t = Self {
            name: name.into(),
            shape,
            data,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let expected: usize = self.shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?} but {} values",
                self.name,
                self.shape,
                self.data.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor `{}` holds non-finite value {v}", self.name)));
        }
        Ok(())
    }
}

/// Parameter tensors plus the configuration that produced them. `state`
/// carries optional resumable trainer/optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format: String,
    pub version: u32,
    pub config: C,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<serde_json::Value>,
}

impl<C: Serialize + DeserializeOwned> Checkpoint<C> {
    pub fn new(config: C, tensors: Vec<NamedTensor>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            tensors,
            state: None,
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn to_json(&self) -> Result<String> {
        for t in &self.tensors {
            t.validate()?;
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        for t in &ck.tensors {
            t.validate()?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Cfg {
        rate: f64,
        name: String,
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 1e6 - 5e5).collect();
        data.extend([0.0, -0.0, f64::MIN_POSITIVE, 1e-310, f64::MAX, 0.1 + 0.2]);
        let n = data.len();
        let ck = Checkpoint::new(
            Cfg {
                rate: 1.0 / 3.0,
                name: "x".into(),
            },
            vec![NamedTensor::new("w", vec![n], data.clone()).unwrap()],
        );
        let back: Checkpoint<Cfg> = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.tensor("w").unwrap().data), bits(&data));
        assert_eq!(back.config, ck.config);
    }

    #[test]
    fn rejects_shape_mismatch_and_bad_version() {
        assert!(NamedTensor::new("w", vec![2, 2], vec![0.0; 3]).is_err());
        let ck = Checkpoint::new(0u8, vec![]);
        let text = ck.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(Checkpoint::<u8>::from_json(&text).is_err());
    }
}
