//! Training of the weight-shared Siamese encoder on the pair graph.
//!
//! Each batch of pairs is encoded through one shared parameter set, the
//! squared distance between the two endpoints feeds the pairwise probability
//! loss, and gradients from both endpoints accumulate into the same
//! parameters.

use crate::data_io::{Dataset, DatasetKind, RunConfig, SeedStream};
use crate::error::{DenError, Result};
use crate::fdist_loss::pair_loss;
use crate::nn_core::{
    Activation, AdamState, DenseCache, DenseNet, TokenAverageNet, TokenCache,
};
use crate::pair_graph::PairGraph;
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default dense-encoder hidden widths.
pub const DENSE_HIDDEN: [usize; 2] = [256, 128];
/// Token encoder widths: embedding table columns and hidden layer.
pub const TOKEN_EMBED_WIDTH: usize = 64;
pub const TOKEN_HIDDEN_WIDTH: usize = 128;

#[derive(Debug, Clone)]
pub enum Encoder {
    Dense(DenseNet),
    TokenAverage(TokenAverageNet),
}

pub enum EncoderCache {
    Dense(DenseCache),
    Token(TokenCache),
}

impl Encoder {
    pub fn for_dataset(data: &Dataset, embed_dim: usize, rng: &mut impl rand::Rng) -> Self {
        match data.kind {
            DatasetKind::Dense => {
                let mut dims = vec![data.n_features()];
                dims.extend_from_slice(&DENSE_HIDDEN);
                dims.push(embed_dim);
                Encoder::Dense(DenseNet::new(&dims, Activation::Relu, rng))
            }
            DatasetKind::TokenSequence { vocab_size } => Encoder::TokenAverage(
                TokenAverageNet::new(vocab_size, TOKEN_EMBED_WIDTH, TOKEN_HIDDEN_WIDTH, embed_dim, rng),
            ),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Dense(n) => n.output_dim(),
            Encoder::TokenAverage(n) => n.output_dim(),
        }
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, EncoderCache)> {
        match self {
            Encoder::Dense(n) => {
                let (out, cache) = n.forward(batch)?;
                Ok((out, EncoderCache::Dense(cache)))
            }
            Encoder::TokenAverage(n) => {
                let (out, cache) = n.forward(batch)?;
                Ok((out, EncoderCache::Token(cache)))
            }
        }
    }

    /// Flat parameter gradients for a cached forward pass.
    pub fn backward(&self, cache: &EncoderCache, out_grad: &Array2<f64>) -> Result<Vec<f64>> {
        match (self, cache) {
            (Encoder::Dense(n), EncoderCache::Dense(c)) => {
                let (grads, _) = n.backward(c, out_grad)?;
                Ok(grads.to_vec())
            }
            (Encoder::TokenAverage(n), EncoderCache::Token(c)) => {
                Ok(n.backward(c, out_grad)?.to_vec())
            }
            _ => Err(DenError::Shape("cache does not match encoder kind".into())),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Encoder::Dense(n) => n.n_params(),
            Encoder::TokenAverage(n) => n.n_params(),
        }
    }

    pub fn params_vec(&self) -> Vec<f64> {
        match self {
            Encoder::Dense(n) => n.params_vec(),
            Encoder::TokenAverage(n) => n.params_vec(),
        }
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        match self {
            Encoder::Dense(n) => n.set_params(flat),
            Encoder::TokenAverage(n) => n.set_params(flat),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub encoder: Encoder,
    pub embed_dim: usize,
}

#[derive(Debug, Clone)]
pub struct EmbeddingResult {
    pub points: Array2<f64>,
    pub loss_history: Vec<f64>,
}

/// Apply the encoder to every sample. Pure in the parameters; batch size does
/// not affect the output.
pub fn embed(model: &EmbeddingModel, data: &Dataset) -> Result<Array2<f64>> {
    let n = data.n_samples();
    let mut out = Array2::zeros((n, model.embed_dim));
    let chunk = 1024;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = data.samples.slice(s![start..end, ..]).to_owned();
        let (z, _) = model.encoder.forward(&batch)?;
        out.slice_mut(s![start..end, ..]).assign(&z);
        start = end;
    }
    Ok(out)
}

/// Train the Siamese encoder on the pair graph with the F-distribution loss.
pub fn train_embedder(
    data: &Dataset,
    graph: &PairGraph,
    cfg: &RunConfig,
    seeds: &SeedStream,
) -> Result<(EmbeddingModel, EmbeddingResult)> {
    if graph.positives.is_empty() && graph.negatives.is_empty() {
        return Err(DenError::Data("pair graph has no pairs".into()));
    }
    let n = data.n_samples();
    for &(a, b) in graph.positives.iter().chain(graph.negatives.iter()) {
        if a >= n || b >= n {
            return Err(DenError::Data(format!(
                "pair index ({a}, {b}) out of range for N = {n}"
            )));
        }
    }

    let mut init_rng = seeds.child("embedder_init");
    let mut encoder = Encoder::for_dataset(data, cfg.embed_dim, &mut init_rng);
    let mut model = EmbeddingModel {
        encoder: encoder.clone(),
        embed_dim: cfg.embed_dim,
    };

    let mut pairs: Vec<(usize, usize, bool)> = graph
        .positives
        .iter()
        .map(|&(a, b)| (a, b, true))
        .chain(graph.negatives.iter().map(|&(a, b)| (a, b, false)))
        .collect();

    let mut adam = AdamState::new(encoder.n_params(), cfg.lr);
    let mut params = encoder.params_vec();
    let mut shuffle_rng = seeds.child("embedder_shuffle");
    let mut loss_history = Vec::with_capacity(cfg.epochs_embed);

    for epoch in 0..cfg.epochs_embed {
        pairs.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for chunk in pairs.chunks(cfg.batch_size) {
            let b = chunk.len();
            let width = data.n_features();
            let mut batch = Array2::zeros((2 * b, width));
            for (p, &(ia, ib, _)) in chunk.iter().enumerate() {
                batch.row_mut(p).assign(&data.samples.row(ia));
                batch.row_mut(b + p).assign(&data.samples.row(ib));
            }
            let (z, cache) = encoder.forward(&batch)?;
            let mut out_grad = Array2::zeros(z.dim());
            let mut batch_loss = 0.0;
            for (p, &(_, _, is_positive)) in chunk.iter().enumerate() {
                let za = z.row(p);
                let zb = z.row(b + p);
                let d2: f64 = za
                    .iter()
                    .zip(zb.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let (loss, dldd2) = pair_loss(d2, cfg.embed_dim, is_positive)?;
                batch_loss += loss;
                let scale = dldd2 / b as f64;
                for (dim, (x, y)) in za.iter().zip(zb.iter()).enumerate() {
                    let g = scale * 2.0 * (x - y);
                    out_grad[[p, dim]] += g;
                    out_grad[[b + p, dim]] -= g;
                }
            }
            let grads = encoder.backward(&cache, &out_grad)?;
            adam.step(&mut params, &grads)?;
            encoder.set_params(&params);
            epoch_loss += batch_loss;
            epoch_pairs += b;
        }
        let mean_loss = epoch_loss / epoch_pairs as f64;
        if !mean_loss.is_finite() {
            return Err(DenError::Numerical(format!(
                "training diverged at epoch {epoch}: loss = {mean_loss}"
            )));
        }
        loss_history.push(mean_loss);
    }

    model.encoder = encoder;
    let points = embed(&model, data)?;
    if points.iter().any(|v| !v.is_finite()) {
        return Err(DenError::Numerical("embedding contains NaN or Inf".into()));
    }
    Ok((model, EmbeddingResult { points, loss_history }))
}

#[derive(Serialize, Deserialize)]
enum EncoderSpec {
    Dense {
        dims: Vec<usize>,
        hidden_act: Activation,
    },
    TokenAverage {
        vocab_size: usize,
        embed_width: usize,
        hidden_width: usize,
        out_dim: usize,
    },
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    spec: EncoderSpec,
    params: Vec<f64>,
}

const CHECKPOINT_VERSION: u32 = 1;

pub fn to_checkpoint(model: &EmbeddingModel) -> Checkpoint {
    let spec = match &model.encoder {
        Encoder::Dense(n) => EncoderSpec::Dense {
            dims: n.dims(),
            hidden_act: n.layers.first().map_or(Activation::Relu, |l| l.act),
        },
        Encoder::TokenAverage(n) => EncoderSpec::TokenAverage {
            vocab_size: n.vocab_size(),
            embed_width: n.embedding.ncols(),
            hidden_width: n.hidden.w.nrows(),
            out_dim: n.output_dim(),
        },
    };
    Checkpoint {
        version: CHECKPOINT_VERSION,
        spec,
        params: model.encoder.params_vec(),
    }
}

pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<EmbeddingModel> {
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(DenError::Data(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    let mut rng = crate::data_io::seeded_rng(0);
    let mut encoder = match &ckpt.spec {
        EncoderSpec::Dense { dims, hidden_act } => {
            Encoder::Dense(DenseNet::new(dims, *hidden_act, &mut rng))
        }
        EncoderSpec::TokenAverage {
            vocab_size,
            embed_width,
            hidden_width,
            out_dim,
        } => Encoder::TokenAverage(TokenAverageNet::new(
            *vocab_size,
            *embed_width,
            *hidden_width,
            *out_dim,
            &mut rng,
        )),
    };
    if ckpt.params.len() != encoder.n_params() {
        return Err(DenError::Data(format!(
            "checkpoint has {} params, architecture needs {}",
            ckpt.params.len(),
            encoder.n_params()
        )));
    }
    encoder.set_params(&ckpt.params);
    let embed_dim = encoder.output_dim();
    Ok(EmbeddingModel { encoder, embed_dim })
}

pub fn save_checkpoint(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string(&to_checkpoint(model))
        .map_err(|e| DenError::Data(e.to_string()))?;
    std::fs::write(path.as_ref(), json)
        .map_err(|e| DenError::io(path.as_ref().display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| DenError::io(path.as_ref().display().to_string(), e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| DenError::Data(e.to_string()))?;
    from_checkpoint(&ckpt)
}

/// Mean silhouette score of labeled points, used by fixture tests.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let n_labels = labels.iter().max().unwrap() + 1;
    let dist = |a: usize, b: usize| -> f64 {
        points
            .row(a)
            .iter()
            .zip(points.row(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; n_labels];
        let mut counts = vec![0usize; n_labels];
        for m in 0..n {
            if m != i {
                sums[labels[m]] += dist(i, m);
                counts[labels[m]] += 1;
            }
        }
        let own = labels[i];
        let a = if counts[own] > 0 {
            sums[own] / counts[own] as f64
        } else {
            0.0
        };
        let b = (0..n_labels)
            .filter(|&l| l != own && counts[l] > 0)
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}
