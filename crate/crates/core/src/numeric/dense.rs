//! Dense layers and small multilayer perceptrons with hand-written backward
//! passes.
//!
//! Layers operate on one example at a time; batching and reductions live in
//! the callers so that gradient accumulation order stays explicit.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `activation(W x + b)` with `W` stored row-major as `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::Config(format!("init range: {e}")))?;
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        check_dim("dense weights", in_dim * out_dim, weights.len())?;
        check_dim("dense bias", out_dim, bias.len())?;
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::Config("dense layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Shape-checked forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("dense input", self.in_dim, input.len())?;
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(input, &mut out);
        Ok(out)
    }

    #[inline]
    pub fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *slot = self.activation.apply(acc);
        }
    }

    /// Backward pass given the forward `input`, its `output`, and the gradient
    /// of the loss w.r.t. `output`. Parameter gradients are accumulated into
    /// `grad` and the input gradient is written (not accumulated) to `d_input`.
    pub fn backward(
        &self,
        input: &[f64],
        output: &[f64],
        d_output: &[f64],
        grad: Option<&mut DenseLayer>,
        d_input: Option<&mut [f64]>,
    ) {
        let mut d_pre = [0.0f64; 256];
        let mut heap;
        let d_pre: &mut [f64] = if self.out_dim <= d_pre.len() {
            &mut d_pre[..self.out_dim]
        } else {
            heap = vec![0.0; self.out_dim];
            &mut heap
        };
        for o in 0..self.out_dim {
            d_pre[o] = d_output[o] * self.activation.derivative_from_output(output[o]);
        }
        if let Some(g) = grad {
            for (o, &dz) in d_pre.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                let row = &mut g.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += dz * x;
                }
                g.bias[o] += dz;
            }
        }
        if let Some(d_in) = d_input {
            d_in.iter_mut().for_each(|v| *v = 0.0);
            for (o, &dz) in d_pre.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (di, w) in d_in.iter_mut().zip(row) {
                    *di += dz * w;
                }
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim, self.activation)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Cached activations of one forward pass through an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i` (after
    /// any dropout mask).
    acts: Vec<Vec<f64>>,
    /// Output of the first layer before the dropout mask, when one was used.
    unmasked: Option<Vec<f64>>,
    mask: Option<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`; hidden layers use `hidden`, the last layer
    /// uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output sizes".into()));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("mlp layer chaining", pair[0].out_dim(), pair[1].in_dim())?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Width of the first layer's output, which is where dropout masks apply.
    pub fn first_width(&self) -> usize {
        self.layers[0].out_dim()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.out_dim()];
            layer.forward_into(&cur, &mut next);
            cur = next;
        }
        cur
    }

    /// Forward pass keeping activations for [`Mlp::backward`]. `mask`, when
    /// present, multiplies the first layer's output elementwise (inverted
    /// dropout) and is ignored for single-layer stacks.
    pub fn forward_trace(&self, input: &[f64], mask: Option<&[f64]>) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let mut unmasked = None;
        let mut used_mask = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim()];
            layer.forward_into(&acts[i], &mut next);
            if i == 0 && self.layers.len() > 1 {
                if let Some(m) = mask {
                    debug_assert_eq!(m.len(), next.len());
                    unmasked = Some(next.clone());
                    next.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                    used_mask = Some(m.to_vec());
                }
            }
            acts.push(next);
        }
        MlpTrace {
            acts,
            unmasked,
            mask: used_mask,
        }
    }

    /// Backpropagates `d_output` through the cached trace. Parameter gradients
    /// accumulate into `grads` when given; the input gradient is written to
    /// `d_input` when given.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        d_output: &[f64],
        mut grads: Option<&mut Mlp>,
        d_input: Option<&mut [f64]>,
    ) {
        let mut delta = d_output.to_vec();
        let last = self.layers.len() - 1;
        let mut d_input = d_input;
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let mut output = &trace.acts[i + 1];
            if i == 0 {
                if let (Some(unmasked), Some(mask)) = (&trace.unmasked, &trace.mask) {
                    delta.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                    output = unmasked;
                }
            }
            let g = grads.as_deref_mut().map(|g| &mut g.layers[i]);
            if i > 0 {
                let mut d_in = vec![0.0; layer.in_dim()];
                layer.backward(&trace.acts[i], output, &delta, g, Some(&mut d_in));
                delta = d_in;
            } else {
                layer.backward(&trace.acts[0], output, &delta, g, d_input.take());
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(DenseLayer::zeros_like).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    /// Parameter tensors in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// `(rows, cols)` of each tensor, matching [`Mlp::tensors`].
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|l| [(l.out_dim, l.in_dim), (l.out_dim, 1)])
            .collect()
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
