//! Forward passes, the full training objective with its reverse-mode
//! gradient, and the discriminator objective.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{check_dim, Error, Result};
use crate::numeric::gaussian::{clamp_log_var, clamp_passes_gradient};
use crate::numeric::loss::{bce_with_logit, bce_with_logit_grad};
use crate::numeric::{sigmoid, GaussianHead, Matrix, Mlp};
use crate::parallel::{map_ranges, Exec, CHUNK};

/// Loss weights: `alpha` on the sensitive reconstruction, `gamma` on total
/// correlation, `(1 + lambda)` on the KL, `beta` on `H(y|b)`, `xi` on `H(y|r_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub xi: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 1.0,
            lambda: 0.1,
            beta: 0.1,
            xi: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("alpha and gamma must be finite and non-negative".into()));
        }
        if !unit(self.lambda) || !unit(self.beta) || !unit(self.xi) {
            return Err(Error::Config("lambda, beta and xi must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Optional objective components. The disentangling VAE part is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermMask {
    pub umi_rm: bool,
    pub umi_b: bool,
    pub supervised: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        Self::full()
    }
}

impl TermMask {
    pub fn full() -> Self {
        Self {
            umi_rm: true,
            umi_b: true,
            supervised: true,
        }
    }

    pub fn vae_only() -> Self {
        Self {
            umi_rm: false,
            umi_b: false,
            supervised: false,
        }
    }
}

/// Per-term weights after applying the mask, in breakdown order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub recon_x: f64,
    pub recon_a: f64,
    pub kl: f64,
    pub tc: f64,
    pub h_y_given_rm: f64,
    pub h_y_given_b: f64,
    pub supervised: f64,
}

impl TermWeights {
    pub fn new(h: &Hyperparams, mask: TermMask) -> Self {
        let on = |b: bool, w: f64| if b { w } else { 0.0 };
        Self {
            recon_x: 1.0,
            recon_a: h.alpha,
            kl: 1.0 + h.lambda,
            tc: h.gamma,
            h_y_given_rm: on(mask.umi_rm, h.xi),
            h_y_given_b: on(mask.umi_b, h.beta),
            supervised: on(mask.supervised, 1.0),
        }
    }
}

/// Unweighted batch-mean loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_x: f64,
    pub recon_a: f64,
    pub kl: f64,
    pub tc: f64,
    pub h_y_given_rm: f64,
    pub h_y_given_b: f64,
    /// Mean of `w_b * CE(y, y_from_z)`.
    pub supervised: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("recon_x", self.recon_x),
            ("recon_a", self.recon_a),
            ("kl", self.kl),
            ("tc", self.tc),
            ("h_y_given_rm", self.h_y_given_rm),
            ("h_y_given_b", self.h_y_given_b),
            ("supervised", self.supervised),
        ]
    }

    /// Weighted sum in a fixed order.
    pub fn weighted_total(&self, w: &TermWeights) -> f64 {
        self.recon_x * w.recon_x
            + w.recon_a * self.recon_a
            + w.kl * self.kl
            + w.tc * self.tc
            + w.h_y_given_rm * self.h_y_given_rm
            + w.h_y_given_b * self.h_y_given_b
            + w.supervised * self.supervised
    }

    fn check_finite(&self) -> Result<()> {
        for (name, v) in self.terms() {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: name });
            }
        }
        if !self.total.is_finite() {
            return Err(Error::NonFinite { term: "total" });
        }
        Ok(())
    }
}

/// Features, observed labels and sensitive bits of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// `n x k` sensitive bits as `0.0 / 1.0`.
    pub a: Matrix,
    /// Fixed supervision weights; recomputed from the b-head when `None`.
    pub w_b: Option<Vec<f64>>,
}

impl Batch {
    pub fn new(x: Matrix, y: Vec<f64>, a: Matrix) -> Result<Self> {
        check_dim("batch labels", x.rows(), y.len())?;
        check_dim("batch sensitive rows", x.rows(), a.rows())?;
        Ok(Self { x, y, a, w_b: None })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// All randomness consumed by one model step: reparameterization noise and
/// dropout masks for the two prediction heads.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNoise {
    pub eps_z: Matrix,
    pub eps_b: Matrix,
    /// Inverted-dropout multipliers, `n x hidden`.
    pub drop_z: Matrix,
    pub drop_b: Matrix,
}

impl BatchNoise {
    pub fn sample<R: Rng + ?Sized>(params: &ModelParams, n: usize, rng: &mut R) -> Self {
        let a = params.arch;
        let mut normal = |rows, cols| {
            let v = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Matrix::from_vec(rows, cols, v).expect("sized")
        };
        let eps_z = normal(n, a.d_z);
        let eps_b = normal(n, a.d_b);
        let keep = 1.0 - a.dropout;
        let mut mask = |cols: usize| {
            let v = (0..n * cols)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Matrix::from_vec(n, cols, v).expect("sized")
        };
        let drop_z = mask(params.y_from_z.first_width());
        let drop_b = mask(params.y_from_b.first_width());
        Self {
            eps_z,
            eps_b,
            drop_z,
            drop_b,
        }
    }

    /// Zero noise and no dropout: samples equal posterior means.
    pub fn deterministic(params: &ModelParams, n: usize) -> Self {
        let a = params.arch;
        Self {
            eps_z: Matrix::zeros(n, a.d_z),
            eps_b: Matrix::zeros(n, a.d_b),
            drop_z: Matrix::from_vec(n, params.y_from_z.first_width(), vec![1.0; n * params.y_from_z.first_width()])
                .expect("sized"),
            drop_b: Matrix::from_vec(n, params.y_from_b.first_width(), vec![1.0; n * params.y_from_b.first_width()])
                .expect("sized"),
        }
    }

    fn check(&self, params: &ModelParams, n: usize) -> Result<()> {
        check_dim("noise rows", n, self.eps_z.rows())?;
        check_dim("noise rows", n, self.eps_b.rows())?;
        check_dim("eps_z width", params.arch.d_z, self.eps_z.cols())?;
        check_dim("eps_b width", params.arch.d_b, self.eps_b.cols())?;
        check_dim("dropout rows", n, self.drop_z.rows())?;
        check_dim("dropout rows", n, self.drop_b.rows())?;
        check_dim("dropout width", params.y_from_z.first_width(), self.drop_z.cols())?;
        check_dim("dropout width", params.y_from_b.first_width(), self.drop_b.cols())?;
        Ok(())
    }
}

/// Encoder outputs and samples for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z_head: Vec<GaussianHead>,
    pub b_head: Vec<GaussianHead>,
    pub z_sample: Matrix,
    pub b_sample: Matrix,
    /// Filled by [`decode_rm_batch`].
    pub rm_logit: Option<Vec<f64>>,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.z_head.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_head.is_empty()
    }

    /// Row `i` of `[z, b]`.
    pub fn joint(&self, i: usize) -> Vec<f64> {
        [self.z_sample.row(i), self.b_sample.row(i)].concat()
    }
}

fn split_heads(params: &ModelParams, out: &[f64]) -> (GaussianHead, GaussianHead) {
    let (dz, db) = (params.arch.d_z, params.arch.d_b);
    let head = |mu: &[f64], lv: &[f64]| GaussianHead {
        mu: mu.to_vec(),
        log_var: lv.iter().map(|&v| clamp_log_var(v)).collect(),
    };
    (
        head(&out[..dz], &out[dz..2 * dz]),
        head(&out[2 * dz..2 * dz + db], &out[2 * dz + db..]),
    )
}

fn sample(head: &GaussianHead, eps: &[f64]) -> Vec<f64> {
    head.mu
        .iter()
        .zip(&head.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Encodes a batch and draws `z = mu_z + sigma_z * eps_z`, `b` likewise.
pub fn encode(params: &ModelParams, x: &Matrix, eps_z: &Matrix, eps_b: &Matrix) -> Result<LatentBatch> {
    check_dim("encoder input", params.input_dim(), x.cols())?;
    check_dim("noise rows", x.rows(), eps_z.rows())?;
    check_dim("noise rows", x.rows(), eps_b.rows())?;
    check_dim("eps_z width", params.arch.d_z, eps_z.cols())?;
    check_dim("eps_b width", params.arch.d_b, eps_b.cols())?;
    let n = x.rows();
    let (mut zh, mut bh) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut zs, mut bs) = (Vec::new(), Vec::new());
    for i in 0..n {
        let (z, b) = split_heads(params, &params.encoder.forward(x.row(i)));
        zs.extend(sample(&z, eps_z.row(i)));
        bs.extend(sample(&b, eps_b.row(i)));
        zh.push(z);
        bh.push(b);
    }
    Ok(LatentBatch {
        z_head: zh,
        b_head: bh,
        z_sample: Matrix::from_vec(n, params.arch.d_z, zs)?,
        b_sample: Matrix::from_vec(n, params.arch.d_b, bs)?,
        rm_logit: None,
    })
}

/// Posterior means `(mu_z, mu_b)` for every row.
pub fn encode_means(params: &ModelParams, x: &Matrix) -> Result<(Matrix, Matrix)> {
    check_dim("encoder input", params.input_dim(), x.cols())?;
    let n = x.rows();
    let (dz, db) = (params.arch.d_z, params.arch.d_b);
    let (mut z, mut b) = (Vec::with_capacity(n * dz), Vec::with_capacity(n * db));
    for row in x.iter_rows() {
        let out = params.encoder.forward(row);
        z.extend_from_slice(&out[..dz]);
        b.extend_from_slice(&out[2 * dz..2 * dz + db]);
    }
    Ok((Matrix::from_vec(n, dz, z)?, Matrix::from_vec(n, db, b)?))
}

/// Reconstruction of `x`: linear values for continuous columns, logits for
/// one-hot columns.
pub fn decode_x(params: &ModelParams, z: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_dim("z", params.arch.d_z, z.len())?;
    check_dim("b", params.arch.d_b, b.len())?;
    Ok(params.x_decoder.forward(&[z, b].concat()))
}

/// One logit per sensitive bit.
pub fn decode_a(params: &ModelParams, b: &[f64]) -> Result<Vec<f64>> {
    check_dim("b", params.arch.d_b, b.len())?;
    Ok(params.a_decoder.forward(b))
}

pub fn decode_rm(params: &ModelParams, z: &[f64]) -> Result<f64> {
    check_dim("z", params.arch.d_z, z.len())?;
    Ok(params.rm_decoder.forward(z)[0])
}

/// Fills `latent.rm_logit` from the sampled `z`.
pub fn decode_rm_batch(params: &ModelParams, latent: &mut LatentBatch) {
    latent.rm_logit = Some(
        latent
            .z_sample
            .iter_rows()
            .map(|z| params.rm_decoder.forward(z)[0])
            .collect(),
    );
}

/// Learned ideal label: 1 iff `sigmoid(r_m) > 0.5`, with `r_m` decoded from
/// the posterior mean of `z`.
pub fn predict_ideal(params: &ModelParams, x: &Matrix) -> Result<Vec<u8>> {
    let (z, _) = encode_means(params, x)?;
    Ok(z.iter_rows()
        .map(|z| (sigmoid(params.rm_decoder.forward(z)[0]) > 0.5) as u8)
        .collect())
}

/// Predictions of a one-logit head applied to latent rows.
pub fn predict_head(head: &Mlp, latent: &Matrix) -> Vec<u8> {
    latent
        .iter_rows()
        .map(|r| (sigmoid(head.forward(r)[0]) > 0.5) as u8)
        .collect()
}

/// Batch means of `CE(y, sigmoid(r_m))` and `CE(y, sigmoid(b_logit))`.
pub fn umi_terms(rm_logits: &[f64], b_logits: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_dim("umi rm logits", y.len(), rm_logits.len())?;
    check_dim("umi b logits", y.len(), b_logits.len())?;
    let n = y.len().max(1) as f64;
    let h_rm = rm_logits.iter().zip(y).map(|(&l, &t)| bce_with_logit(l, t)).sum::<f64>() / n;
    let h_b = b_logits.iter().zip(y).map(|(&l, &t)| bce_with_logit(l, t)).sum::<f64>() / n;
    Ok((h_rm, h_b))
}

/// `1 - p(y|b)` where `p(y|b)` is the probability the head assigns to the
/// observed label value.
#[inline]
pub fn bias_weight(b_logit: f64, y: f64) -> f64 {
    let p1 = sigmoid(b_logit);
    let p_y = if y > 0.5 { p1 } else { 1.0 - p1 };
    1.0 - p_y
}

/// `w_b` per example from the sampled `b` (no dropout).
pub fn supervision_weights(params: &ModelParams, batch: &Batch, noise: &BatchNoise) -> Result<Vec<f64>> {
    let latent = encode(params, &batch.x, &noise.eps_z, &noise.eps_b)?;
    Ok(latent
        .b_sample
        .iter_rows()
        .zip(&batch.y)
        .map(|(b, &y)| bias_weight(params.y_from_b.forward(b)[0], y))
        .collect())
}

/// Batch mean of the discriminator logit on encoder samples; by the
/// density-ratio identity this estimates the total correlation.
pub fn tc_estimate(params: &ModelParams, latent: &LatentBatch) -> f64 {
    let n = latent.len().max(1) as f64;
    (0..latent.len())
        .map(|i| params.discriminator.forward(&latent.joint(i))[0])
        .sum::<f64>()
        / n
}

/// How fake samples for the discriminator are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcMode {
    /// `z ~ N(0, I)`, `b ~ Uniform(0, 1)`.
    #[default]
    Prior,
    /// Real `z` paired with `b` from a shuffled batch.
    Permute,
}

/// Fake `(z, b)` rows for one discriminator step.
pub fn sample_fake<R: Rng + ?Sized>(mode: TcMode, real: &LatentBatch, rng: &mut R) -> (Matrix, Matrix) {
    let n = real.len();
    let (dz, db) = (real.z_sample.cols(), real.b_sample.cols());
    match mode {
        TcMode::Prior => {
            let z = (0..n * dz).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let b = (0..n * db).map(|_| rng.random::<f64>()).collect();
            (
                Matrix::from_vec(n, dz, z).expect("sized"),
                Matrix::from_vec(n, db, b).expect("sized"),
            )
        }
        TcMode::Permute => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            (real.z_sample.clone(), real.b_sample.select_rows(&perm))
        }
    }
}

/// Mean binary cross-entropy over the `2n` samples, real labelled 1 and fake
/// labelled 0.
pub fn discriminator_loss(params: &ModelParams, real: &LatentBatch, fake_z: &Matrix, fake_b: &Matrix) -> Result<f64> {
    Ok(discriminator_loss_grad(&params.discriminator, real, fake_z, fake_b, false)?.0)
}

/// Loss and gradient w.r.t. the discriminator parameters only.
pub fn discriminator_loss_grad(
    disc: &Mlp,
    real: &LatentBatch,
    fake_z: &Matrix,
    fake_b: &Matrix,
    with_grad: bool,
) -> Result<(f64, Option<Mlp>)> {
    let n = real.len();
    check_dim("fake z rows", n, fake_z.rows())?;
    check_dim("fake b rows", n, fake_b.rows())?;
    check_dim("fake z width", real.z_sample.cols(), fake_z.cols())?;
    check_dim("fake b width", real.b_sample.cols(), fake_b.cols())?;
    let scale = 1.0 / (2 * n).max(1) as f64;
    let mut grad = with_grad.then(|| disc.zeros_like());
    let mut loss = 0.0;
    for i in 0..n {
        for (input, target) in [
            (real.joint(i), 1.0),
            ([fake_z.row(i), fake_b.row(i)].concat(), 0.0),
        ] {
            let trace = disc.forward_trace(&input, None);
            let l = trace.output()[0];
            loss += bce_with_logit(l, target);
            if let Some(g) = grad.as_mut() {
                disc.backward(&trace, &[scale * bce_with_logit_grad(l, target)], Some(g), None);
            }
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite { term: "discriminator" });
    }
    Ok((loss, grad))
}

/// Unweighted reconstruction loss of one row and its gradient w.r.t. the
/// decoder output.
pub fn recon_x_row(onehot: &[bool], x_hat: &[f64], x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let mut loss = 0.0;
    for j in 0..x.len() {
        if onehot[j] {
            loss += bce_with_logit(x_hat[j], x[j]);
        } else {
            let d = x_hat[j] - x[j];
            loss += 0.5 * d * d;
        }
    }
    if let Some(g) = grad {
        for j in 0..x.len() {
            g[j] = if onehot[j] {
                bce_with_logit_grad(x_hat[j], x[j])
            } else {
                x_hat[j] - x[j]
            };
        }
    }
    loss
}

/// Sums of the seven per-example terms over a range of rows.
#[derive(Debug, Clone, Copy, Default)]
struct TermSums([f64; 7]);

impl TermSums {
    fn add(&mut self, other: &TermSums) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }
}

/// Forward and (optionally) backward pass for one example. Gradients are
/// scaled by `scale` and accumulated into `grads`.
#[allow(clippy::too_many_arguments)]
fn example_pass(
    p: &ModelParams,
    w: &TermWeights,
    x: &[f64],
    y: f64,
    a: &[f64],
    eps_z: &[f64],
    eps_b: &[f64],
    drop_z: &[f64],
    drop_b: &[f64],
    fixed_wb: Option<f64>,
    scale: f64,
    grads: Option<&mut ModelParams>,
) -> TermSums {
    let (dz, db) = (p.arch.d_z, p.arch.d_b);
    let enc = p.encoder.forward_trace(x, None);
    let raw = enc.output();
    let (zh, bh) = split_heads(p, raw);
    let z = sample(&zh, eps_z);
    let b = sample(&bh, eps_b);
    let zb = [z.as_slice(), b.as_slice()].concat();

    let xdec = p.x_decoder.forward_trace(&zb, None);
    let adec = p.a_decoder.forward_trace(&b, None);
    let rm = p.rm_decoder.forward_trace(&z, None);
    let yz = p.y_from_z.forward_trace(&z, Some(drop_z));
    let yb = p.y_from_b.forward_trace(&b, Some(drop_b));
    let disc_logit = p.discriminator.forward(&zb)[0];
    // Detached weight from the head without dropout.
    let w_b = fixed_wb.unwrap_or_else(|| bias_weight(p.y_from_b.forward(&b)[0], y));

    let mut d_xhat = vec![0.0; x.len()];
    let recon_x = recon_x_row(&p.onehot, xdec.output(), x, grads.is_some().then_some(&mut d_xhat[..]));
    let a_logits = adec.output();
    let recon_a: f64 = a_logits.iter().zip(a).map(|(&l, &t)| bce_with_logit(l, t)).sum();
    let kl = crate::numeric::gaussian_kl(&zh) + crate::numeric::gaussian_kl(&bh);
    let rm_l = rm.output()[0];
    let yz_l = yz.output()[0];
    let yb_l = yb.output()[0];
    let terms = TermSums([
        recon_x,
        recon_a,
        kl,
        disc_logit,
        bce_with_logit(rm_l, y),
        bce_with_logit(yb_l, y),
        w_b * bce_with_logit(yz_l, y),
    ]);

    let Some(g) = grads else {
        return terms;
    };

    let mut d_z = vec![0.0; dz];
    let mut d_b = vec![0.0; db];
    let mut d_zb = vec![0.0; dz + db];
    let add = |acc: &mut [f64], d: &[f64]| acc.iter_mut().zip(d).for_each(|(a, v)| *a += v);

    // Feature reconstruction.
    d_xhat.iter_mut().for_each(|v| *v *= scale * w.recon_x);
    p.x_decoder.backward(&xdec, &d_xhat, Some(&mut g.x_decoder), Some(&mut d_zb));
    add(&mut d_z, &d_zb[..dz]);
    add(&mut d_b, &d_zb[dz..]);

    // Sensitive reconstruction.
    if w.recon_a != 0.0 {
        let d_a: Vec<f64> = a_logits
            .iter()
            .zip(a)
            .map(|(&l, &t)| scale * w.recon_a * bce_with_logit_grad(l, t))
            .collect();
        let mut tmp = vec![0.0; db];
        p.a_decoder.backward(&adec, &d_a, Some(&mut g.a_decoder), Some(&mut tmp));
        add(&mut d_b, &tmp);
    }

    // Total correlation: gradient reaches the encoder only.
    if w.tc != 0.0 {
        let trace = p.discriminator.forward_trace(&zb, None);
        p.discriminator.backward(&trace, &[scale * w.tc], None, Some(&mut d_zb));
        add(&mut d_z, &d_zb[..dz]);
        add(&mut d_b, &d_zb[dz..]);
    }

    let mut tmp_z = vec![0.0; dz];
    if w.h_y_given_rm != 0.0 {
        let d = scale * w.h_y_given_rm * bce_with_logit_grad(rm_l, y);
        p.rm_decoder.backward(&rm, &[d], Some(&mut g.rm_decoder), Some(&mut tmp_z));
        add(&mut d_z, &tmp_z);
    }
    if w.supervised != 0.0 && w_b != 0.0 {
        let d = scale * w.supervised * w_b * bce_with_logit_grad(yz_l, y);
        p.y_from_z.backward(&yz, &[d], Some(&mut g.y_from_z), Some(&mut tmp_z));
        add(&mut d_z, &tmp_z);
    }
    if w.h_y_given_b != 0.0 {
        let d = scale * w.h_y_given_b * bce_with_logit_grad(yb_l, y);
        let mut tmp = vec![0.0; db];
        p.y_from_b.backward(&yb, &[d], Some(&mut g.y_from_b), Some(&mut tmp));
        add(&mut d_b, &tmp);
    }

    // Reparameterization and KL back to the encoder outputs.
    let kl_w = scale * w.kl;
    let mut d_raw = vec![0.0; raw.len()];
    let mut fill = |head: &GaussianHead, eps: &[f64], d_s: &[f64], mu_at: usize| {
        let k = head.dim();
        for j in 0..k {
            let lv = head.log_var[j];
            let sd = (0.5 * lv).exp();
            d_raw[mu_at + j] = d_s[j] + kl_w * head.mu[j];
            if clamp_passes_gradient(raw[mu_at + k + j]) {
                d_raw[mu_at + k + j] = d_s[j] * 0.5 * sd * eps[j] + kl_w * 0.5 * (lv.exp() - 1.0);
            }
        }
    };
    fill(&zh, eps_z, &d_z, 0);
    fill(&bh, eps_b, &d_b, 2 * dz);
    p.encoder.backward(&enc, &d_raw, Some(&mut g.encoder), None);
    terms
}

fn check_batch(params: &ModelParams, batch: &Batch, noise: &BatchNoise) -> Result<()> {
    check_dim("batch features", params.input_dim(), batch.x.cols())?;
    check_dim("batch sensitive bits", params.sensitive_dim, batch.a.cols())?;
    noise.check(params, batch.len())?;
    if let Some(w) = &batch.w_b {
        check_dim("supervision weights", batch.len(), w.len())?;
    }
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    Ok(())
}

/// Value and (optionally) gradient of the full objective. Gradient
/// accumulation runs over fixed-size chunks reduced in order, so the result is
/// identical for every [`Exec`].
pub fn dbrf_objective(
    params: &ModelParams,
    batch: &Batch,
    noise: &BatchNoise,
    hyper: &Hyperparams,
    mask: TermMask,
    exec: Exec,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<ModelParams>)> {
    hyper.validate()?;
    objective_with_weights(params, batch, noise, &TermWeights::new(hyper, mask), exec, with_grad)
}

/// [`dbrf_objective`] with explicit per-term weights.
pub fn objective_with_weights(
    params: &ModelParams,
    batch: &Batch,
    noise: &BatchNoise,
    w: &TermWeights,
    exec: Exec,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<ModelParams>)> {
    check_batch(params, batch, noise)?;
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let parts = map_ranges(exec, n, CHUNK, |r| {
        let mut g = with_grad.then(|| params.zeros_like());
        let mut sums = TermSums::default();
        for i in r {
            let t = example_pass(
                params,
                w,
                batch.x.row(i),
                batch.y[i],
                batch.a.row(i),
                noise.eps_z.row(i),
                noise.eps_b.row(i),
                noise.drop_z.row(i),
                noise.drop_b.row(i),
                batch.w_b.as_ref().map(|w| w[i]),
                scale,
                g.as_mut(),
            );
            sums.add(&t);
        }
        (sums, g)
    });
    let mut sums = TermSums::default();
    let mut grad: Option<ModelParams> = None;
    for (s, g) in parts {
        sums.add(&s);
        if let Some(g) = g {
            match grad.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grad = Some(g),
            }
        }
    }
    let m = sums.0.map(|v| v * scale);
    let mut out = LossBreakdown {
        recon_x: m[0],
        recon_a: m[1],
        kl: m[2],
        tc: m[3],
        h_y_given_rm: m[4],
        h_y_given_b: m[5],
        supervised: m[6],
        total: 0.0,
    };
    out.total = out.weighted_total(w);
    out.check_finite()?;
    Ok((out, grad))
}

/// Loss breakdown of the full objective for one batch.
pub fn dbrf_loss(
    params: &ModelParams,
    batch: &Batch,
    noise: &BatchNoise,
    hyper: &Hyperparams,
    mask: TermMask,
) -> Result<LossBreakdown> {
    Ok(dbrf_objective(params, batch, noise, hyper, mask, Exec::Sequential, false)?.0)
}
