//! Synthetic fixture generation.

use crate::data_io::{Dataset, DatasetKind, SeedStream};
use crate::error::{DenError, Result};
use ndarray::Array2;
use rand_distr::{Distribution, Normal};

/// Isotropic Gaussian blobs with labeled samples. Centers are placed so every
/// pairwise center distance is at least 10x the spread.
pub fn make_blobs(
    n_clusters: usize,
    points_per_cluster: usize,
    dim: usize,
    spread: f64,
    seeds: &SeedStream,
) -> Result<Dataset> {
    if spread <= 0.0 {
        return Err(DenError::Data("spread must be > 0".into()));
    }
    if n_clusters == 0 || points_per_cluster == 0 || dim == 0 {
        return Err(DenError::Data("blob shape parameters must be positive".into()));
    }
    let mut rng = seeds.child("make_blobs");
    let min_sep = 10.0 * spread;

    // Rejection-sample centers in a box scaled to hold them comfortably.
    let box_half = min_sep * (n_clusters as f64).cbrt().max(1.0) * 2.0;
    let uniform = rand_distr::Uniform::new(-box_half, box_half);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_clusters);
    while centers.len() < n_clusters {
        let cand: Vec<f64> = (0..dim).map(|_| uniform.sample(&mut rng)).collect();
        let ok = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= min_sep
        });
        if ok {
            centers.push(cand);
        }
    }

    let normal = Normal::new(0.0, spread).unwrap();
    let n = n_clusters * points_per_cluster;
    let mut samples = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for p in 0..points_per_cluster {
            let row = c * points_per_cluster + p;
            for (j, &cj) in center.iter().enumerate() {
                samples[[row, j]] = cj + normal.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    Dataset::new(samples, Some(labels), None, DatasetKind::Dense)
}
