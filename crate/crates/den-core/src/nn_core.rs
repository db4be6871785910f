//! Minimal differentiable network toolkit: dense layers, SELU/ReLU
//! activations, a token-embedding-average encoder, Adam, and
//! finite-difference gradient verification.
//!
//! Parameters expose a flat `Vec<f64>` view so the optimizer and the
//! checkpoint format stay agnostic of architecture.

use crate::error::{DenError, Result};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    Selu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Selu => selu(x),
        }
    }

    /// Derivative as a function of the pre-activation. SELU at exactly 0
    /// takes the positive branch.
    pub fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if pre >= 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * pre.exp()
                }
            }
        }
    }
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// out x in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

impl DenseLayer {
    /// LeCun-normal init for SELU/linear layers, He-normal for ReLU.
    pub fn init(in_dim: usize, out_dim: usize, act: Activation, rng: &mut impl Rng) -> Self {
        let std = match act {
            Activation::Relu => (2.0 / in_dim as f64).sqrt(),
            _ => (1.0 / in_dim as f64).sqrt(),
        };
        let normal = Normal::new(0.0, std).unwrap();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| normal.sample(rng));
        DenseLayer {
            w,
            b: Array1::zeros(out_dim),
            act,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer inputs and pre-activations saved by the forward pass.
#[derive(Debug)]
pub struct DenseCache {
    inputs: Vec<Array2<f64>>,
    pres: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl DenseNet {
    /// Build from a dimension chain, e.g. `[20, 256, 128, 2]`, with the given
    /// hidden activation and a linear final layer.
    pub fn new(dims: &[usize], hidden_act: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() {
                    Activation::Linear
                } else {
                    hidden_act
                };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect();
        DenseNet { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        if batch.ncols() != self.input_dim() {
            return Err(DenError::Shape(format!(
                "batch width {} does not match input dim {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut cache = DenseCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pres: Vec::with_capacity(self.layers.len()),
        };
        let mut x = batch.clone();
        for layer in &self.layers {
            cache.inputs.push(x.clone());
            let mut pre = x.dot(&layer.w.t());
            pre += &layer.b;
            cache.pres.push(pre.clone());
            x = pre.mapv(|v| layer.act.apply(v));
        }
        Ok((x, cache))
    }

    /// Reverse-mode gradients. `out_grad` is dLoss/dOutput; returns parameter
    /// gradients and dLoss/dInput.
    pub fn backward(
        &self,
        cache: &DenseCache,
        out_grad: &Array2<f64>,
    ) -> Result<(DenseGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(DenError::Shape("cache does not match network depth".into()));
        }
        let mut grads = vec![
            (Array2::zeros((0, 0)), Array1::zeros(0));
            self.layers.len()
        ];
        let mut upstream = out_grad.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pres[idx];
            if upstream.dim() != pre.dim() {
                return Err(DenError::Shape(format!(
                    "gradient shape {:?} does not match layer output {:?}",
                    upstream.dim(),
                    pre.dim()
                )));
            }
            let dpre = &upstream * &pre.mapv(|v| layer.act.grad(v));
            let dw = dpre.t().dot(&cache.inputs[idx]);
            let db = dpre.sum_axis(Axis(0));
            upstream = dpre.dot(&layer.w);
            grads[idx] = (dw, db);
        }
        Ok((DenseGrads { layers: grads }, upstream))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[off];
                off += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
    }
}

impl DenseGrads {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn add_into(&self, acc: &mut [f64]) {
        let mut off = 0;
        for (w, b) in &self.layers {
            for v in w.iter().chain(b.iter()) {
                acc[off] += v;
                off += 1;
            }
        }
    }
}

/// fastText-style encoder for token sequences: embedding lookup, average over
/// positions, then dense hidden and output layers.
#[derive(Debug, Clone)]
pub struct TokenAverageNet {
    /// vocab x embed
    pub embedding: Array2<f64>,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

#[derive(Debug)]
pub struct TokenCache {
    tokens: Array2<f64>,
    averaged: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden_out: Array2<f64>,
}

impl TokenAverageNet {
    pub fn new(
        vocab_size: usize,
        embed_width: usize,
        hidden_width: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let normal = Normal::new(0.0, (1.0 / embed_width as f64).sqrt()).unwrap();
        TokenAverageNet {
            embedding: Array2::from_shape_fn((vocab_size, embed_width), |_| normal.sample(rng)),
            hidden: DenseLayer::init(embed_width, hidden_width, Activation::Relu, rng),
            output: DenseLayer::init(hidden_width, out_dim, Activation::Linear, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.output.w.nrows()
    }

    fn token_id(&self, v: f64) -> Result<usize> {
        let id = v as usize;
        if v < 0.0 || v.fract() != 0.0 || id >= self.vocab_size() {
            return Err(DenError::Data(format!(
                "token id {v} outside [0, {})",
                self.vocab_size()
            )));
        }
        Ok(id)
    }

    pub fn forward(&self, tokens: &Array2<f64>) -> Result<(Array2<f64>, TokenCache)> {
        let (batch, seq_len) = tokens.dim();
        if seq_len == 0 {
            return Err(DenError::Shape("empty token sequence".into()));
        }
        let e = self.embedding.ncols();
        let mut averaged = Array2::zeros((batch, e));
        for (i, row) in tokens.axis_iter(Axis(0)).enumerate() {
            for &t in row {
                let id = self.token_id(t)?;
                let emb = self.embedding.row(id);
                for (j, v) in emb.iter().enumerate() {
                    averaged[[i, j]] += v;
                }
            }
            for j in 0..e {
                averaged[[i, j]] /= seq_len as f64;
            }
        }
        let mut hidden_pre = averaged.dot(&self.hidden.w.t());
        hidden_pre += &self.hidden.b;
        let hidden_out = hidden_pre.mapv(|v| self.hidden.act.apply(v));
        let mut out = hidden_out.dot(&self.output.w.t());
        out += &self.output.b;
        Ok((
            out,
            TokenCache {
                tokens: tokens.clone(),
                averaged,
                hidden_pre,
                hidden_out,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &TokenCache,
        out_grad: &Array2<f64>,
    ) -> Result<TokenGrads> {
        let seq_len = cache.tokens.ncols();
        let d_out_w = out_grad.t().dot(&cache.hidden_out);
        let d_out_b = out_grad.sum_axis(Axis(0));
        let d_hidden_out = out_grad.dot(&self.output.w);
        let d_hidden_pre = &d_hidden_out * &cache.hidden_pre.mapv(|v| self.hidden.act.grad(v));
        let d_hidden_w = d_hidden_pre.t().dot(&cache.averaged);
        let d_hidden_b = d_hidden_pre.sum_axis(Axis(0));
        let d_avg = d_hidden_pre.dot(&self.hidden.w);

        let mut d_embedding = Array2::zeros(self.embedding.dim());
        for (i, row) in cache.tokens.axis_iter(Axis(0)).enumerate() {
            for &t in row {
                let id = self.token_id(t)?;
                for (j, g) in d_avg.row(i).iter().enumerate() {
                    d_embedding[[id, j]] += g / seq_len as f64;
                }
            }
        }
        Ok(TokenGrads {
            embedding: d_embedding,
            hidden: (d_hidden_w, d_hidden_b),
            output: (d_out_w, d_out_b),
        })
    }

    pub fn n_params(&self) -> usize {
        self.embedding.len()
            + self.hidden.w.len()
            + self.hidden.b.len()
            + self.output.w.len()
            + self.output.b.len()
    }

    pub fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.embedding.iter());
        out.extend(self.hidden.w.iter());
        out.extend(self.hidden.b.iter());
        out.extend(self.output.w.iter());
        out.extend(self.output.b.iter());
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter();
        for v in self.embedding.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self
            .hidden
            .w
            .iter_mut()
            .chain(self.hidden.b.iter_mut())
            .chain(self.output.w.iter_mut())
            .chain(self.output.b.iter_mut())
        {
            *v = *it.next().unwrap();
        }
    }
}

#[derive(Debug, Clone)]
pub struct TokenGrads {
    pub embedding: Array2<f64>,
    pub hidden: (Array2<f64>, Array1<f64>),
    pub output: (Array2<f64>, Array1<f64>),
}

impl TokenGrads {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.embedding.iter());
        out.extend(self.hidden.0.iter());
        out.extend(self.hidden.1.iter());
        out.extend(self.output.0.iter());
        out.extend(self.output.1.iter());
        out
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DenError::Shape(format!(
                "adam state sized for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Softmax cross-entropy over a batch of logits with integer targets.
/// Returns the mean loss and dLoss/dLogits.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    targets: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if targets.len() != batch {
        return Err(DenError::Shape(format!(
            "{} targets for batch of {batch}",
            targets.len()
        )));
    }
    let mut grad = Array2::zeros((batch, classes));
    let mut loss = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        if targets[i] >= classes {
            return Err(DenError::Data(format!(
                "target {} out of range for {classes} classes",
                targets[i]
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss -= ((exps[targets[i]] / z).max(1e-300)).ln();
        for (c, e) in exps.iter().enumerate() {
            grad[[i, c]] = (e / z - if c == targets[i] { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// Compare analytic gradients against central finite differences over every
/// parameter. `loss_fn` maps the network output to a scalar loss and its
/// gradient. Returns the maximum relative error.
pub fn grad_check_dense<F>(net: &mut DenseNet, batch: &Array2<f64>, loss_fn: F) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let (out, cache) = net.forward(batch)?;
    let (_, out_grad) = loss_fn(&out);
    let (grads, _) = net.backward(&cache, &out_grad)?;
    let analytic = grads.to_vec();
    let mut params = net.params_vec();
    let fd = finite_diff(&mut params, |p| {
        net.set_params(p);
        let (out, _) = net.forward(batch).unwrap();
        loss_fn(&out).0
    });
    net.set_params(&params);
    Ok(max_rel_err(&analytic, &fd))
}

pub fn grad_check_token<F>(
    net: &mut TokenAverageNet,
    tokens: &Array2<f64>,
    loss_fn: F,
) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let (out, cache) = net.forward(tokens)?;
    let (_, out_grad) = loss_fn(&out);
    let grads = net.backward(&cache, &out_grad)?;
    let analytic = grads.to_vec();
    let mut params = net.params_vec();
    let fd = finite_diff(&mut params, |p| {
        net.set_params(p);
        let (out, _) = net.forward(tokens).unwrap();
        loss_fn(&out).0
    });
    net.set_params(&params);
    Ok(max_rel_err(&analytic, &fd))
}

fn finite_diff(params: &mut Vec<f64>, mut eval: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    const H: f64 = 1e-5;
    let mut fd = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + H;
        let plus = eval(params);
        params[i] = orig - H;
        let minus = eval(params);
        params[i] = orig;
        fd[i] = (plus - minus) / (2.0 * H);
    }
    fd
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
