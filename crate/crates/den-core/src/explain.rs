//! Model-agnostic Shapley attribution of cluster assignments (Kernel SHAP).
//!
//! The explained quantity is the probability of the sample's own predicted
//! cluster. Masked features are replaced by background values, averaged over
//! background rows. Coalitions are weighted by the Shapley kernel and the
//! attribution solves a weighted least squares system constrained so the
//! values sum to the model output minus the base value (local accuracy). In
//! exhaustive mode the solution is the exact Shapley value.

use crate::cluster_head::{predict_cluster, ClusterModel};
use crate::data_io::SeedStream;
use crate::error::{DenError, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// Default coalition budget: exhaustive up to 2^D, capped at 2048.
pub fn default_n_coalitions(n_features: usize) -> usize {
    if n_features >= 11 {
        2048
    } else {
        1usize << n_features
    }
}

#[derive(Debug, Clone)]
pub struct Attribution {
    pub sample_index: usize,
    pub cluster_id: usize,
    /// One Shapley value per input feature, in units of cluster probability.
    pub phi: Vec<f64>,
    /// Expected model output over the background.
    pub base_value: f64,
}

impl Attribution {
    /// Local accuracy residual |base + sum(phi) - f(x)|.
    pub fn additivity_gap(&self, fx: f64) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - fx).abs()
    }
}

/// Evaluate `f` on the sample with only the coalition's features taken from
/// the sample and the rest from each background row, averaged.
fn masked_eval<F>(
    f: &F,
    sample: &Array1<f64>,
    background: &Array2<f64>,
    coalition: u64,
) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> Result<Vec<f64>>,
{
    let b = background.nrows();
    let d = background.ncols();
    let mut batch = background.clone();
    for j in 0..d {
        if coalition >> j & 1 == 1 {
            for i in 0..b {
                batch[[i, j]] = sample[j];
            }
        }
    }
    let outputs = f(&batch)?;
    Ok(outputs.iter().sum::<f64>() / b as f64)
}

fn shapley_kernel_weight(d: usize, s: usize) -> f64 {
    // (d - 1) / (C(d, s) * s * (d - s))
    let mut ln_choose = 0.0;
    for i in 0..s {
        ln_choose += ((d - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    (d - 1) as f64 / (ln_choose.exp() * (s * (d - s)) as f64)
}

/// Kernel SHAP against an arbitrary scalar-output model function.
///
/// When `n_coalitions` covers all 2^D subsets the result equals the exact
/// Shapley value; otherwise coalitions are sampled from the Shapley kernel
/// distribution. The all-on and all-off coalitions are always incorporated
/// through the additivity constraint.
pub fn kernel_shap_fn<F>(
    f: &F,
    sample: &Array1<f64>,
    background: &Array2<f64>,
    n_coalitions: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&Array2<f64>) -> Result<Vec<f64>>,
{
    let d = sample.len();
    if background.nrows() == 0 {
        return Err(DenError::Data("background set is empty".into()));
    }
    if background.ncols() != d {
        return Err(DenError::Shape(format!(
            "background width {} does not match sample width {d}",
            background.ncols()
        )));
    }
    if n_coalitions < d + 2 {
        return Err(DenError::Data(format!(
            "n_coalitions = {n_coalitions} underdetermined for {d} features (need >= {})",
            d + 2
        )));
    }
    if d > 62 {
        return Err(DenError::Data(
            "coalition masks support at most 62 features".into(),
        ));
    }

    let base = masked_eval(f, sample, background, 0)?;
    let fx = masked_eval(f, sample, background, !0u64 >> (64 - d))?;

    if d == 1 {
        return Ok((vec![fx - base], base));
    }

    let full = 1u64 << d;
    let exhaustive = n_coalitions as u128 >= full as u128;
    let (coalitions, weights): (Vec<u64>, Vec<f64>) = if exhaustive {
        let mut cs = Vec::with_capacity(full as usize - 2);
        let mut ws = Vec::with_capacity(full as usize - 2);
        for z in 1..full - 1 {
            cs.push(z);
            ws.push(shapley_kernel_weight(d, z.count_ones() as usize));
        }
        (cs, ws)
    } else {
        // Sample subset sizes from the kernel distribution, then a uniform
        // subset of that size; unit weights because the kernel is already in
        // the sampling density.
        let size_weights: Vec<f64> = (1..d)
            .map(|s| {
                // kernel weight times the number of subsets of that size
                1.0 / (s * (d - s)) as f64
            })
            .collect();
        let total: f64 = size_weights.iter().sum();
        let mut cs = Vec::with_capacity(n_coalitions);
        for _ in 0..n_coalitions {
            let mut target = rng.gen_range(0.0..total);
            let mut size = d - 1;
            for (idx, w) in size_weights.iter().enumerate() {
                target -= w;
                if target < 0.0 {
                    size = idx + 1;
                    break;
                }
            }
            let mut mask = 0u64;
            let mut picked = 0usize;
            while picked < size {
                let j = rng.gen_range(0..d);
                if mask >> j & 1 == 0 {
                    mask |= 1 << j;
                    picked += 1;
                }
            }
            cs.push(mask);
        }
        let ws = vec![1.0; cs.len()];
        (cs, ws)
    };

    // Constrained WLS: eliminate the last feature with
    // phi_{d-1} = (fx - base) - sum_{j<d-1} phi_j.
    let rows = coalitions.len();
    let cols = d - 1;
    let mut x = DMatrix::zeros(rows, cols);
    let mut y = DVector::zeros(rows);
    for (r, &z) in coalitions.iter().enumerate() {
        let v = masked_eval(f, sample, background, z)?;
        let z_last = (z >> (d - 1) & 1) as f64;
        y[r] = v - base - z_last * (fx - base);
        for j in 0..cols {
            x[(r, j)] = (z >> j & 1) as f64 - z_last;
        }
    }
    let mut xtwx = DMatrix::zeros(cols, cols);
    let mut xtwy = DVector::zeros(cols);
    for r in 0..rows {
        let w = weights[r];
        for a in 0..cols {
            if x[(r, a)] == 0.0 {
                continue;
            }
            xtwy[a] += w * x[(r, a)] * y[r];
            for b in 0..cols {
                xtwx[(a, b)] += w * x[(r, a)] * x[(r, b)];
            }
        }
    }
    let solution = xtwx
        .lu()
        .solve(&xtwy)
        .ok_or_else(|| DenError::Numerical("singular kernel SHAP system".into()))?;

    let mut phi: Vec<f64> = solution.iter().copied().collect();
    let last = (fx - base) - phi.iter().sum::<f64>();
    phi.push(last);
    Ok((phi, base))
}

/// Shapley attribution of one sample's predicted-cluster probability.
pub fn kernel_shap(
    model: &ClusterModel,
    sample_index: usize,
    sample: &Array1<f64>,
    background: &Array2<f64>,
    n_coalitions: usize,
    rng: &mut impl Rng,
) -> Result<Attribution> {
    let row = sample.clone().insert_axis(Axis(0));
    let (pred, _) = predict_cluster(model, &row)?;
    let cluster_id = pred[0];
    let f = |batch: &Array2<f64>| -> Result<Vec<f64>> {
        let (_, probs) = predict_cluster(model, batch)?;
        Ok(probs.column(cluster_id).to_vec())
    };
    let (phi, base_value) = kernel_shap_fn(&f, sample, background, n_coalitions, rng)?;
    Ok(Attribution {
        sample_index,
        cluster_id,
        phi,
        base_value,
    })
}

/// Attribute a list of samples against a shared background.
pub fn explain_batch(
    model: &ClusterModel,
    samples: &Array2<f64>,
    sample_indices: &[usize],
    background: &Array2<f64>,
    n_coalitions: usize,
    seeds: &SeedStream,
) -> Result<Vec<Attribution>> {
    if sample_indices.len() != samples.nrows() {
        return Err(DenError::Shape("indices do not match sample rows".into()));
    }
    samples
        .axis_iter(Axis(0))
        .zip(sample_indices)
        .map(|(row, &idx)| {
            let mut rng = seeds.child_indexed("shap", idx as u64);
            kernel_shap(
                model,
                idx,
                &row.to_owned(),
                background,
                n_coalitions,
                &mut rng,
            )
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::seeded_rng;
    use ndarray::array;

    fn linear_model(coefs: Vec<f64>) -> impl Fn(&Array2<f64>) -> Result<Vec<f64>> {
        move |batch: &Array2<f64>| {
            Ok(batch
                .axis_iter(Axis(0))
                .map(|row| row.iter().zip(&coefs).map(|(x, c)| x * c).sum())
                .collect())
        }
    }

    #[test]
    fn linear_model_recovers_coefficients() {
        let f = linear_model(vec![2.0, 3.0]);
        let sample = array![1.0, 1.0];
        let background = array![[0.0, 0.0]];
        let mut rng = seeded_rng(0);
        let (phi, base) = kernel_shap_fn(&f, &sample, &background, 4, &mut rng).unwrap();
        assert!((phi[0] - 2.0).abs() < 1e-6, "phi = {phi:?}");
        assert!((phi[1] - 3.0).abs() < 1e-6);
        assert_eq!(base, 0.0);
    }

    #[test]
    fn null_player_gets_zero() {
        // feature 1 identical in sample and background
        let f = linear_model(vec![2.0, 5.0, -1.0]);
        let sample = array![1.0, 4.0, 2.0];
        let background = array![[0.0, 4.0, 0.5], [0.3, 4.0, -0.5]];
        let mut rng = seeded_rng(1);
        let (phi, _) = kernel_shap_fn(&f, &sample, &background, 8, &mut rng).unwrap();
        assert!(phi[1].abs() < 1e-9, "phi = {phi:?}");
    }

    #[test]
    fn symmetry_for_identical_features() {
        // features 0 and 1 play identical roles in model, sample, background
        let f = |batch: &Array2<f64>| -> Result<Vec<f64>> {
            Ok(batch
                .axis_iter(Axis(0))
                .map(|r| (r[0] + r[1]).tanh() + 0.5 * r[2])
                .collect())
        };
        let sample = array![0.7, 0.7, -0.2];
        let background = array![[0.1, 0.1, 0.4], [-0.3, -0.3, 0.0]];
        let mut rng = seeded_rng(2);
        let (phi, _) = kernel_shap_fn(&f, &sample, &background, 8, &mut rng).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-9, "phi = {phi:?}");
    }

    #[test]
    fn exhaustive_matches_enumeration_oracle() {
        for d in [4usize, 8] {
            let mut rng = seeded_rng(d as u64);
            use rand::Rng;
            let coefs: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // nonlinear model so the test is not trivially linear
            let cs = coefs.clone();
            let f = move |batch: &Array2<f64>| -> Result<Vec<f64>> {
                Ok(batch
                    .axis_iter(Axis(0))
                    .map(|r| {
                        let lin: f64 = r.iter().zip(&cs).map(|(x, c)| x * c).sum();
                        lin.tanh() + 0.1 * r[0] * r[d - 1]
                    })
                    .collect())
            };
            let sample = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
            let background = Array2::from_shape_fn((3, d), |_| rng.gen_range(-1.0..1.0));
            let (phi, base) =
                kernel_shap_fn(&f, &sample, &background, 1 << d, &mut rng).unwrap();
            let exact = oracle::exact_shapley(&f, &sample, &background);
            for (a, b) in phi.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-6, "d={d}: {phi:?} vs {exact:?}");
            }
            let fx = masked_eval(&f, &sample, &background, (1u64 << d) - 1).unwrap();
            assert!((base + phi.iter().sum::<f64>() - fx).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_mode_additivity_holds() {
        let d = 16;
        let mut rng = seeded_rng(9);
        use rand::Rng;
        let coefs: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = linear_model(coefs);
        let sample = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
        let background = Array2::from_shape_fn((5, d), |_| rng.gen_range(-1.0..1.0));
        let (phi, base) = kernel_shap_fn(&f, &sample, &background, 2048, &mut rng).unwrap();
        let fx = masked_eval(&f, &sample, &background, (1u64 << d) - 1).unwrap();
        // additivity is enforced by construction even in sampled mode
        assert!((base + phi.iter().sum::<f64>() - fx).abs() < 1e-9);
    }

    #[test]
    fn underdetermined_rejected() {
        let f = linear_model(vec![1.0, 1.0, 1.0]);
        let sample = array![1.0, 2.0, 3.0];
        let background = array![[0.0, 0.0, 0.0]];
        let mut rng = seeded_rng(3);
        assert!(kernel_shap_fn(&f, &sample, &background, 4, &mut rng).is_err());
    }

    #[test]
    fn repeated_sample_identical_attribution() {
        use crate::cluster_head::{train_head, ClusterModel};
        use crate::data_io::{Dataset, DatasetKind};
        use crate::siamese_embedder::{EmbeddingModel, Encoder};
        use crate::spectral_cluster::ClusterLabels;
        use rand::Rng;

        let mut rng = seeded_rng(4);
        let pts = Array2::from_shape_fn((40, 3), |_| rng.gen_range(-1.0..1.0));
        let data = Dataset::new(pts.clone(), None, None, DatasetKind::Dense).unwrap();
        let encoder = Encoder::for_dataset(&data, 2, &mut rng);
        let emodel = EmbeddingModel {
            encoder,
            embed_dim: 2,
        };
        let z = crate::siamese_embedder::embed(&emodel, &data).unwrap();
        let labels = ClusterLabels {
            labels: (0..40).map(|i| i % 2).collect(),
            n_clusters: 2,
            d_avg: 1.0,
        };
        let cfg = crate::data_io::RunConfig {
            epochs_head: 5,
            ..Default::default()
        };
        let (head, trivial) = train_head(&z, &labels, &cfg, &SeedStream::new(4)).unwrap();
        let model = ClusterModel {
            encoder: emodel,
            head,
            n_clusters: 2,
            trivial,
        };
        let background = pts.slice(ndarray::s![..10, ..]).to_owned();
        let sample = pts.row(20).to_owned().insert_axis(Axis(0));
        let doubled = ndarray::concatenate(Axis(0), &[sample.view(), sample.view()]).unwrap();
        let seeds = SeedStream::new(11);
        let atts =
            explain_batch(&model, &doubled, &[20, 20], &background, 8, &seeds).unwrap();
        assert_eq!(atts[0].phi, atts[1].phi);
        assert_eq!(atts[0].cluster_id, atts[1].cluster_id);

        let empty = Array2::zeros((0, 3));
        let none = explain_batch(&model, &empty, &[], &background, 8, &seeds).unwrap();
        assert!(none.is_empty());
    }
}
