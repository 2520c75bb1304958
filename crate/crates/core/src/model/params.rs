use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ColumnKind;
use crate::error::{Error, Result};
use crate::numeric::{Activation, Mlp, NamedTensor};

/// Latent and hidden sizes shared by every sub-network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub d_z: usize,
    pub d_b: usize,
    pub hidden: usize,
    /// Dropout rate on the hidden layer of the two prediction heads.
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d_z: 8,
            d_b: 4,
            hidden: 64,
            dropout: 0.2,
        }
    }
}

impl ArchConfig {
    /// Sizes used for the two-dimensional synthetic data.
    pub fn synthetic() -> Self {
        Self {
            d_z: 4,
            d_b: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.d_b == 0 || self.hidden == 0 {
            return Err(Error::Config("latent and hidden sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Every trainable network of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: ArchConfig,
    /// Per feature column: whether it is a one-hot indicator.
    pub onehot: Vec<bool>,
    pub sensitive_dim: usize,
    /// `x -> (mu_z, log_var_z, mu_b, log_var_b)`.
    pub encoder: Mlp,
    /// `(z, b) -> x_hat`.
    pub x_decoder: Mlp,
    /// `b -> a logits`.
    pub a_decoder: Mlp,
    /// `z -> r_m`.
    pub rm_decoder: Mlp,
    pub y_from_z: Mlp,
    pub y_from_b: Mlp,
    /// `(z, b) -> real/fake logit`.
    pub discriminator: Mlp,
}

/// Names of the networks in tensor order.
pub const NETWORKS: [&str; 7] = [
    "encoder",
    "x_decoder",
    "a_decoder",
    "rm_decoder",
    "y_from_z",
    "y_from_b",
    "discriminator",
];

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(
        column_kinds: &[ColumnKind],
        sensitive_dim: usize,
        arch: ArchConfig,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        let d = column_kinds.len();
        if d == 0 || sensitive_dim == 0 {
            return Err(Error::Config("model needs features and sensitive bits".into()));
        }
        let (dz, db, h) = (arch.d_z, arch.d_b, arch.hidden);
        let mlp = |sizes: &[usize], rng: &mut R| Mlp::new(sizes, Activation::Relu, Activation::Identity, rng);
        Ok(Self {
            arch,
            onehot: column_kinds.iter().map(|k| *k == ColumnKind::OneHot).collect(),
            sensitive_dim,
            encoder: mlp(&[d, h, 2 * (dz + db)], rng)?,
            x_decoder: mlp(&[dz + db, h, d], rng)?,
            a_decoder: mlp(&[db, h, sensitive_dim], rng)?,
            rm_decoder: mlp(&[dz, h, 1], rng)?,
            y_from_z: mlp(&[dz, h, 1], rng)?,
            y_from_b: mlp(&[db, h, 1], rng)?,
            discriminator: mlp(&[dz + db, h, 1], rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.onehot.len()
    }

    pub fn networks(&self) -> [&Mlp; 7] {
        [
            &self.encoder,
            &self.x_decoder,
            &self.a_decoder,
            &self.rm_decoder,
            &self.y_from_z,
            &self.y_from_b,
            &self.discriminator,
        ]
    }

    pub fn networks_mut(&mut self) -> [&mut Mlp; 7] {
        [
            &mut self.encoder,
            &mut self.x_decoder,
            &mut self.a_decoder,
            &mut self.rm_decoder,
            &mut self.y_from_z,
            &mut self.y_from_b,
            &mut self.discriminator,
        ]
    }

    /// Same shapes, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for net in z.networks_mut() {
            *net = net.zeros_like();
        }
        z
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.networks_mut().into_iter().zip(other.networks()) {
            a.add_assign(b);
        }
    }

    /// Tensors of every network except the discriminator.
    pub fn model_tensors(&self) -> Vec<&[f64]> {
        self.networks()[..6].iter().flat_map(|n| n.tensors()).collect()
    }

    pub fn model_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.networks_mut()
            .into_iter()
            .take(6)
            .flat_map(|n| n.tensors_mut())
            .collect()
    }

    pub fn disc_tensors(&self) -> Vec<&[f64]> {
        self.discriminator.tensors()
    }

    pub fn disc_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.discriminator.tensors_mut()
    }

    /// Concatenation of the non-discriminator parameters.
    pub fn flatten_model(&self) -> Vec<f64> {
        self.model_tensors().concat()
    }

    /// Inverse of [`ModelParams::flatten_model`].
    pub fn unflatten_model(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.model_tensors().iter().map(|t| t.len()).sum();
        crate::error::check_dim("flattened parameters", total, flat.len())?;
        let mut at = 0;
        for t in self.model_tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    pub fn encoder_decoder_count(&self) -> usize {
        self.encoder.parameter_count() + self.x_decoder.parameter_count()
    }

    pub fn parameter_count(&self) -> usize {
        self.networks().iter().map(|n| n.parameter_count()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.networks().iter().all(|n| n.is_finite())
    }

    /// Named tensors `network.layer.{weight,bias}` for checkpoints.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, net) in NETWORKS.iter().zip(self.networks()) {
            for (i, (t, (r, c))) in net.tensors().into_iter().zip(net.tensor_shapes()).enumerate() {
                let kind = if i % 2 == 0 { "weight" } else { "bias" };
                let shape = if i % 2 == 0 { vec![r, c] } else { vec![r] };
                out.push(NamedTensor {
                    name: format!("{name}.{}.{kind}", i / 2),
                    shape,
                    data: t.to_vec(),
                });
            }
        }
        out
    }

    /// Overwrites parameters from named tensors; shapes must match.
    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut slots: Vec<&mut [f64]> = self.networks_mut().into_iter().flat_map(|n| n.tensors_mut()).collect();
        for (slot, exp) in slots.iter_mut().zip(&expected) {
            let t = tensors
                .iter()
                .find(|t| t.name == exp.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", exp.name)))?;
            if t.shape != exp.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    t.name, t.shape, exp.shape
                )));
            }
            slot.copy_from_slice(&t.data);
        }
        Ok(())
    }
}
