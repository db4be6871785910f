//! Parametric cluster prediction: a SELU head trained on the spectral labels,
//! then end-to-end fine-tuning of encoder + head at a lower learning rate.
//!
//! Spectral labels stay frozen as targets throughout; there is no
//! re-clustering between epochs.

pub use crate::metrics::{accuracy, nmi};

use crate::data_io::{Dataset, RunConfig, SeedStream};
use crate::error::{DenError, Result};
use crate::nn_core::{
    softmax_cross_entropy, softmax_rows, Activation, AdamState, DenseNet,
};
use crate::siamese_embedder::EmbeddingModel;
use crate::spectral_cluster::ClusterLabels;
use ndarray::{s, Array2};
use rand::seq::SliceRandom;

/// Head hidden widths (SELU activations, softmax output).
pub const HEAD_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub encoder: EmbeddingModel,
    pub head: DenseNet,
    pub n_clusters: usize,
    /// Set when the spectral stage found a single cluster; the head is a
    /// constant predictor in that case.
    pub trivial: bool,
}

/// Train the head alone on (embedding point, spectral label) pairs with
/// cross-entropy; the encoder is not touched.
pub fn train_head(
    points: &Array2<f64>,
    labels: &ClusterLabels,
    cfg: &RunConfig,
    seeds: &SeedStream,
) -> Result<(DenseNet, bool)> {
    let n = points.nrows();
    if labels.labels.len() != n {
        return Err(DenError::Shape(format!(
            "{} labels for {n} points",
            labels.labels.len()
        )));
    }
    let c = labels.n_clusters.max(1);
    let trivial = c == 1;

    let mut init_rng = seeds.child("head_init");
    let mut dims = vec![points.ncols()];
    dims.extend_from_slice(&HEAD_HIDDEN);
    dims.push(c);
    let mut head = DenseNet::new(&dims, Activation::Selu, &mut init_rng);

    let mut adam = AdamState::new(head.n_params(), cfg.lr);
    let mut params = head.params_vec();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seeds.child("head_shuffle");

    for epoch in 0..cfg.epochs_head {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = points.select(ndarray::Axis(0), chunk);
            let targets: Vec<usize> = chunk.iter().map(|&i| labels.labels[i]).collect();
            let (logits, cache) = head.forward(&batch)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &targets)?;
            let (grads, _) = head.backward(&cache, &dlogits)?;
            adam.step(&mut params, &grads.to_vec())?;
            head.set_params(&params);
            epoch_loss += loss * chunk.len() as f64;
        }
        if !epoch_loss.is_finite() {
            return Err(DenError::Numerical(format!(
                "head training diverged at epoch {epoch}"
            )));
        }
    }
    Ok((head, trivial))
}

/// Predicted cluster ids and the full probability vectors.
pub fn predict_cluster(
    model: &ClusterModel,
    samples: &Array2<f64>,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let n = samples.nrows();
    let mut probs = Array2::zeros((n, model.n_clusters));
    let chunk = 1024;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = samples.slice(s![start..end, ..]).to_owned();
        let (z, _) = model.encoder.encoder.forward(&batch)?;
        let (logits, _) = model.head.forward(&z)?;
        probs.slice_mut(s![start..end, ..]).assign(&softmax_rows(&logits));
        start = end;
    }
    let labels = probs
        .axis_iter(ndarray::Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0
        })
        .collect();
    Ok((labels, probs))
}

fn training_accuracy(model: &ClusterModel, data: &Dataset, targets: &[usize]) -> Result<f64> {
    let (pred, _) = predict_cluster(model, &data.samples)?;
    let hits = pred.iter().zip(targets).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Unfreeze the encoder and train encoder + head jointly against the frozen
/// spectral labels at `lr_finetune`. Errors if training accuracy drops more
/// than one point below its pre-fine-tune value.
pub fn finetune_end_to_end(
    mut model: ClusterModel,
    data: &Dataset,
    labels: &ClusterLabels,
    cfg: &RunConfig,
    seeds: &SeedStream,
) -> Result<ClusterModel> {
    let n = data.n_samples();
    if labels.labels.len() != n {
        return Err(DenError::Shape(format!(
            "{} labels for {n} samples",
            labels.labels.len()
        )));
    }
    let acc_before = training_accuracy(&model, data, &labels.labels)?;

    let n_enc = model.encoder.encoder.n_params();
    let n_head = model.head.n_params();
    let mut params = model.encoder.encoder.params_vec();
    params.extend(model.head.params_vec());
    let mut adam = AdamState::new(n_enc + n_head, cfg.lr_finetune);

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seeds.child("finetune_shuffle");

    for epoch in 0..cfg.epochs_finetune {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.samples.select(ndarray::Axis(0), chunk);
            let targets: Vec<usize> = chunk.iter().map(|&i| labels.labels[i]).collect();
            let (z, enc_cache) = model.encoder.encoder.forward(&batch)?;
            let (logits, head_cache) = model.head.forward(&z)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &targets)?;
            let (head_grads, dz) = model.head.backward(&head_cache, &dlogits)?;
            let enc_grads = model.encoder.encoder.backward(&enc_cache, &dz)?;
            let mut flat = enc_grads;
            flat.extend(head_grads.to_vec());
            adam.step(&mut params, &flat)?;
            model.encoder.encoder.set_params(&params[..n_enc]);
            model.head.set_params(&params[n_enc..]);
            epoch_loss += loss * chunk.len() as f64;
        }
        if !epoch_loss.is_finite() {
            return Err(DenError::Numerical(format!(
                "fine-tuning diverged at epoch {epoch}"
            )));
        }
    }

    let acc_after = training_accuracy(&model, data, &labels.labels)?;
    if acc_after < acc_before - 0.01 {
        return Err(DenError::Numerical(format!(
            "fine-tuning degraded training accuracy: {acc_before:.4} -> {acc_after:.4}"
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{seeded_rng, DatasetKind};
    use crate::metrics::ari;
    use crate::siamese_embedder::Encoder;
    use rand::Rng;

    fn blob_embedding(per: usize, seed: u64) -> (Array2<f64>, ClusterLabels) {
        let mut rng = seeded_rng(seed);
        let centers = [(0.0, 0.0), (6.0, 0.0)];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(cx + rng.gen_range(-0.5..0.5));
                rows.push(cy + rng.gen_range(-0.5..0.5));
                labels.push(c);
            }
        }
        (
            Array2::from_shape_vec((2 * per, 2), rows).unwrap(),
            ClusterLabels {
                labels,
                n_clusters: 2,
                d_avg: 1.0,
            },
        )
    }

    fn head_cfg() -> RunConfig {
        RunConfig {
            epochs_head: 50,
            epochs_finetune: 20,
            batch_size: 64,
            ..RunConfig::default()
        }
    }

    fn model_for(points: &Array2<f64>, labels: &ClusterLabels, seed: u64) -> ClusterModel {
        // identity-ish encoder: dense 2 -> 2 trained nowhere; head does the work
        let mut rng = seeded_rng(seed);
        let data = Dataset::new(points.clone(), None, None, DatasetKind::Dense).unwrap();
        let encoder = Encoder::for_dataset(&data, 2, &mut rng);
        let (head, trivial) =
            train_head(points, labels, &head_cfg(), &SeedStream::new(seed)).unwrap();
        ClusterModel {
            encoder: EmbeddingModel {
                encoder,
                embed_dim: 2,
            },
            head,
            n_clusters: labels.n_clusters,
            trivial,
        }
    }

    #[test]
    fn head_fits_separable_embedding() {
        let (points, labels) = blob_embedding(60, 1);
        let (head, trivial) =
            train_head(&points, &labels, &head_cfg(), &SeedStream::new(1)).unwrap();
        assert!(!trivial);
        let (logits, _) = head.forward(&points).unwrap();
        let correct = logits
            .axis_iter(ndarray::Axis(0))
            .zip(&labels.labels)
            .filter(|(row, &l)| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
                    == l
            })
            .count();
        assert!(correct as f64 / 120.0 >= 0.99, "accuracy {}", correct as f64 / 120.0);
    }

    #[test]
    fn single_cluster_flagged_trivial() {
        let (points, mut labels) = blob_embedding(20, 2);
        labels.labels.iter_mut().for_each(|l| *l = 0);
        labels.n_clusters = 1;
        let (head, trivial) =
            train_head(&points, &labels, &head_cfg(), &SeedStream::new(2)).unwrap();
        assert!(trivial);
        let (logits, _) = head.forward(&points).unwrap();
        assert_eq!(logits.ncols(), 1);
    }

    #[test]
    fn label_permutation_same_accuracy() {
        let (points, labels) = blob_embedding(40, 3);
        let permuted = ClusterLabels {
            labels: labels.labels.iter().map(|&l| 1 - l).collect(),
            n_clusters: 2,
            d_avg: labels.d_avg,
        };
        let cfg = head_cfg();
        let acc_of = |labs: &ClusterLabels| {
            let (head, _) = train_head(&points, labs, &cfg, &SeedStream::new(3)).unwrap();
            let (logits, _) = head.forward(&points).unwrap();
            logits
                .axis_iter(ndarray::Axis(0))
                .zip(&labs.labels)
                .filter(|(row, &l)| {
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0
                        == l
                })
                .count()
        };
        assert_eq!(acc_of(&labels), acc_of(&permuted));
    }

    #[test]
    fn predict_cluster_probabilities_sum_to_one() {
        let (points, labels) = blob_embedding(30, 4);
        let model = model_for(&points, &labels, 4);
        let (pred, probs) = predict_cluster(&model, &points).unwrap();
        assert_eq!(pred.len(), 60);
        for row in probs.axis_iter(ndarray::Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        // batch vs single
        let single = points.slice(s![5..6, ..]).to_owned();
        let (p1, pr1) = predict_cluster(&model, &single).unwrap();
        assert_eq!(p1[0], pred[5]);
        assert_eq!(pr1.row(0), probs.row(5));
    }

    #[test]
    fn finetune_preserves_accuracy_and_zero_lr_is_identity() {
        let (points, labels) = blob_embedding(50, 5);
        let data = Dataset::new(points.clone(), None, None, DatasetKind::Dense).unwrap();
        // Train head on the encoder's own embedding so end-to-end accuracy is
        // meaningful before fine-tuning.
        let mut rng = seeded_rng(5);
        let encoder = Encoder::for_dataset(&data, 2, &mut rng);
        let model0 = EmbeddingModel {
            encoder,
            embed_dim: 2,
        };
        let z = crate::siamese_embedder::embed(&model0, &data).unwrap();
        let cfg = head_cfg();
        let (head, trivial) = train_head(&z, &labels, &cfg, &SeedStream::new(5)).unwrap();
        let model = ClusterModel {
            encoder: model0,
            head,
            n_clusters: 2,
            trivial,
        };

        // lr_finetune = 0: parameters unchanged
        let zero_cfg = RunConfig {
            lr_finetune: 0.0,
            epochs_finetune: 3,
            ..cfg.clone()
        };
        let before = model.encoder.encoder.params_vec();
        let out =
            finetune_end_to_end(model.clone(), &data, &labels, &zero_cfg, &SeedStream::new(6))
                .unwrap();
        assert_eq!(out.encoder.encoder.params_vec(), before);

        // real fine-tune: accuracy within guard and ARI against spectral labels high
        let tuned =
            finetune_end_to_end(model, &data, &labels, &cfg, &SeedStream::new(6)).unwrap();
        let (pred, _) = predict_cluster(&tuned, &data.samples).unwrap();
        assert!(ari(&pred, &labels.labels).unwrap() >= 0.95);

        // determinism
        let z2 = {
            let mut rng = seeded_rng(5);
            let encoder = Encoder::for_dataset(&data, 2, &mut rng);
            let m = EmbeddingModel {
                encoder,
                embed_dim: 2,
            };
            crate::siamese_embedder::embed(&m, &data).unwrap()
        };
        assert_eq!(z, z2);
    }

    #[test]
    fn argmax_invariant_under_monotone_logit_transform() {
        let (points, labels) = blob_embedding(25, 7);
        let model = model_for(&points, &labels, 7);
        let (z, _) = model.encoder.encoder.forward(&points).unwrap();
        let (logits, _) = model.head.forward(&z).unwrap();
        let transformed = logits.mapv(|v| 3.0 * v + 10.0);
        let argmax = |m: &Array2<f64>| -> Vec<usize> {
            m.axis_iter(ndarray::Axis(0))
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0
                })
                .collect()
        };
        assert_eq!(argmax(&logits), argmax(&transformed));
    }
}
