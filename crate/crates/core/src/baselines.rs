//! Reference systems: vanilla VAE, logistic classifiers on representations or
//! raw features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ColumnKind;
use crate::error::{check_dim, Error, Result};
use crate::model::objective::recon_x_row;
use crate::model::ArchConfig;
use crate::numeric::gaussian::{clamp_log_var, clamp_passes_gradient};
use crate::numeric::{adam_step, gaussian_kl, sigmoid, Activation, AdamConfig, GaussianHead, Matrix, Mlp, NamedTensor,
    OptimizerState};
use crate::parallel::{map_ranges, Exec, CHUNK};
use crate::trainer::{TrainConfig, TrainView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

/// `p(y=1|x) = sigmoid(w.x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticClassifier {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Bits with ties going to 0.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        check_dim("classifier input", self.weights.len(), x.cols())?;
        Ok(x.iter_rows().map(|r| (sigmoid(self.logit(r)) > 0.5) as u8).collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + 1
    }
}

/// Mini-batch Adam on the mean cross-entropy.
pub fn fit_logistic(x: &Matrix, y: &[u8], cfg: &LogisticConfig) -> Result<LogisticClassifier> {
    check_dim("classifier labels", x.rows(), y.len())?;
    if x.rows() == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("logistic fit needs rows and a positive batch size".into()));
    }
    let d = x.cols();
    let mut model = LogisticClassifier {
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let mut opt = OptimizerState::new(AdamConfig::default().with_learning_rate(cfg.learning_rate), &[d, 1])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            let scale = 1.0 / idx.len() as f64;
            for &i in idx {
                let row = x.row(i);
                let err = scale * (sigmoid(model.logit(row)) - y[i] as f64);
                gw.iter_mut().zip(row).for_each(|(g, v)| *g += err * v);
                gb += err;
            }
            let mut bias = [model.bias];
            adam_step(&mut [&mut model.weights, &mut bias], &[&gw, &[gb]], &mut opt)?;
            model.bias = bias[0];
        }
    }
    Ok(model)
}

/// Classifier on frozen representations against observed labels.
pub fn train_downstream(representations: &Matrix, observed: &[u8], cfg: &LogisticConfig) -> Result<LogisticClassifier> {
    fit_logistic(representations, observed, cfg)
}

/// Classifier on standardized raw features.
pub fn train_raw_lr(train: &TrainView, cfg: &LogisticConfig) -> Result<LogisticClassifier> {
    fit_logistic(&train.x, &train.y, cfg)
}

/// Unsupervised VAE with one latent block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaVae {
    pub onehot: Vec<bool>,
    pub latent_dim: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Batch-mean ELBO terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VaeLoss {
    pub recon_x: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub recon_x: f64,
    pub kl: f64,
}

impl VanillaVae {
    /// Latent size `d_z + d_b` so the budget matches the DBRF encoder/decoder.
    pub fn new<R: Rng + ?Sized>(kinds: &[ColumnKind], arch: ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let d = kinds.len();
        let l = arch.d_z + arch.d_b;
        let h = arch.hidden;
        Ok(Self {
            onehot: kinds.iter().map(|k| *k == ColumnKind::OneHot).collect(),
            latent_dim: l,
            encoder: Mlp::new(&[d, h, 2 * l], Activation::Relu, Activation::Identity, rng)?,
            decoder: Mlp::new(&[l, h, d], Activation::Relu, Activation::Identity, rng)?,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.parameter_count() + self.decoder.parameter_count()
    }

    fn head(&self, raw: &[f64]) -> GaussianHead {
        let l = self.latent_dim;
        GaussianHead {
            mu: raw[..l].to_vec(),
            log_var: raw[l..].iter().map(|&v| clamp_log_var(v)).collect(),
        }
    }

    /// Posterior means.
    pub fn encode_means(&self, x: &Matrix) -> Result<Matrix> {
        check_dim("vae input", self.onehot.len(), x.cols())?;
        let rows: Vec<f64> = x
            .iter_rows()
            .flat_map(|r| self.encoder.forward(r)[..self.latent_dim].to_vec())
            .collect();
        Matrix::from_vec(x.rows(), self.latent_dim, rows)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            onehot: self.onehot.clone(),
            latent_dim: self.latent_dim,
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("vae parameters", self.parameter_count(), flat.len())?;
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, net) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, (t, (r, c))) in net.tensors().into_iter().zip(net.tensor_shapes()).enumerate() {
                let kind = if i % 2 == 0 { "weight" } else { "bias" };
                let shape = if i % 2 == 0 { vec![r, c] } else { vec![r] };
                out.push(NamedTensor {
                    name: format!("vae.{name}.{}.{kind}", i / 2),
                    shape,
                    data: t.to_vec(),
                });
            }
        }
        out
    }

    fn add_assign(&mut self, other: &VanillaVae) {
        self.encoder.add_assign(&other.encoder);
        self.decoder.add_assign(&other.decoder);
    }
}

/// ELBO (reconstruction plus KL with weight 1) and optionally its gradient.
/// `eps` is `n x latent_dim` standard-normal noise.
pub fn vae_loss(
    vae: &VanillaVae,
    x: &Matrix,
    eps: &Matrix,
    exec: Exec,
    with_grad: bool,
) -> Result<(VaeLoss, Option<VanillaVae>)> {
    check_dim("vae input", vae.onehot.len(), x.cols())?;
    check_dim("vae noise rows", x.rows(), eps.rows())?;
    check_dim("vae noise width", vae.latent_dim, eps.cols())?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let l = vae.latent_dim;
    let parts = map_ranges(exec, n, CHUNK, |r| {
        let mut g = with_grad.then(|| vae.zeros_like());
        let (mut rec, mut kl) = (0.0, 0.0);
        for i in r {
            let xi = x.row(i);
            let e = eps.row(i);
            let enc = vae.encoder.forward_trace(xi, None);
            let raw = enc.output();
            let head = vae.head(raw);
            let z: Vec<f64> = (0..l)
                .map(|j| head.mu[j] + (0.5 * head.log_var[j]).exp() * e[j])
                .collect();
            let dec = vae.decoder.forward_trace(&z, None);
            let mut d_xhat = vec![0.0; xi.len()];
            rec += recon_x_row(&vae.onehot, dec.output(), xi, g.is_some().then_some(&mut d_xhat[..]));
            kl += gaussian_kl(&head);
            if let Some(g) = g.as_mut() {
                d_xhat.iter_mut().for_each(|v| *v *= scale);
                let mut d_z = vec![0.0; l];
                vae.decoder.backward(&dec, &d_xhat, Some(&mut g.decoder), Some(&mut d_z));
                let mut d_raw = vec![0.0; 2 * l];
                for j in 0..l {
                    let lv = head.log_var[j];
                    let sd = (0.5 * lv).exp();
                    d_raw[j] = d_z[j] + scale * head.mu[j];
                    if clamp_passes_gradient(raw[l + j]) {
                        d_raw[l + j] = d_z[j] * 0.5 * sd * e[j] + scale * 0.5 * (lv.exp() - 1.0);
                    }
                }
                vae.encoder.backward(&enc, &d_raw, Some(&mut g.encoder), None);
            }
        }
        (rec, kl, g)
    });
    let (mut rec, mut kl) = (0.0, 0.0);
    let mut grad: Option<VanillaVae> = None;
    for (r, k, g) in parts {
        rec += r;
        kl += k;
        if let Some(g) = g {
            match grad.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grad = Some(g),
            }
        }
    }
    let (recon_x, kl) = (rec * scale, kl * scale);
    let loss = VaeLoss {
        recon_x,
        kl,
        total: recon_x + kl,
    };
    for (term, v) in [("recon_x", recon_x), ("kl", kl)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term });
        }
    }
    Ok((loss, grad))
}

fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let v = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, v).expect("sized")
}

/// Trains on features only; labels of any kind are never seen. Uses the
/// epochs, batch size, model learning rate, seed and exec of `cfg`.
pub fn train_vanilla_vae(
    kinds: &[ColumnKind],
    arch: ArchConfig,
    cfg: &TrainConfig,
    x: &Matrix,
) -> Result<(VanillaVae, Vec<VaeEpoch>)> {
    cfg.validate(x.rows())?;
    check_dim("vae column kinds", kinds.len(), x.cols())?;
    let mut vae = VanillaVae::new(kinds, arch, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let lens: Vec<usize> = vae.tensors().iter().map(|t| t.len()).collect();
    let mut opt = OptimizerState::new(AdamConfig::default().with_learning_rate(cfg.lr_model), &lens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut rng);
        let (mut rec, mut kl, mut steps) = (0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(idx);
            let eps = standard_normal(&mut rng, idx.len(), vae.latent_dim);
            let (loss, g) = vae_loss(&vae, &xb, &eps, cfg.exec, true)?;
            let g = g.expect("gradient requested");
            adam_step(&mut vae.tensors_mut(), &g.tensors(), &mut opt)?;
            rec += loss.recon_x;
            kl += loss.kl;
            steps += 1;
        }
        history.push(VaeEpoch {
            epoch,
            recon_x: rec / steps as f64,
            kl: kl / steps as f64,
        });
    }
    Ok((vae, history))
}
