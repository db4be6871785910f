//! Spectral clustering of the embedding with automatic cluster-count
//! estimation.
//!
//! The Gaussian affinity bandwidth is the mean embedding distance between
//! positive pairs, so the affinity inherits the same notion of relatedness
//! the pair graph was built from. The number of clusters is read off the
//! unnormalized Laplacian spectrum (eigenvalues below a weak threshold),
//! deliberately overestimated, then collapsed by a majority-vote KNN filter
//! that also extends subset labels to the full dataset.

use crate::data_io::{RunConfig, SeedStream};
use crate::error::{DenError, Result};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

/// Bandwidth floor: below this, d_avg is replaced by the mean of all
/// pairwise subset distances.
pub const D_AVG_FLOOR: f64 = 1e-8;

/// Cap on positive pairs used for the d_avg mean.
const D_AVG_MAX_PAIRS: usize = 100_000;

#[derive(Debug, Clone)]
pub struct SpectralConfig {
    pub gamma: f64,
    pub eigen_threshold: f64,
    pub subsample_size: usize,
    pub knn_filter_neighbors: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl SpectralConfig {
    pub fn from_run_config(cfg: &RunConfig) -> Self {
        SpectralConfig {
            gamma: cfg.gamma,
            eigen_threshold: cfg.eigen_threshold,
            subsample_size: cfg.spectral_subsample,
            knn_filter_neighbors: cfg.knn_filter_neighbors,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
        }
    }
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig::from_run_config(&RunConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub d_avg: f64,
}

fn row_dist(points: &Array2<f64>, a: usize, b: usize) -> f64 {
    points
        .row(a)
        .iter()
        .zip(points.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean embedding distance over positive pairs. Strided subsample above
/// [`D_AVG_MAX_PAIRS`] pairs, exact mean otherwise.
pub fn compute_d_avg(points: &Array2<f64>, positives: &[(usize, usize)]) -> Result<f64> {
    if positives.is_empty() {
        return Err(DenError::Data("no positive pairs for d_avg".into()));
    }
    let stride = positives.len().div_ceil(D_AVG_MAX_PAIRS);
    let mut sum = 0.0;
    let mut count = 0usize;
    for &(a, b) in positives.iter().step_by(stride) {
        sum += row_dist(points, a, b);
        count += 1;
    }
    Ok(sum / count as f64)
}

/// Gaussian affinity exp(-||x-y||^2 / (gamma d_avg^2)) over a point subset.
pub fn affinity_matrix(subset: &Array2<f64>, d_avg: f64, gamma: f64) -> Result<Array2<f64>> {
    if d_avg <= 0.0 {
        return Err(DenError::Numerical("affinity bandwidth must be > 0".into()));
    }
    let s = subset.nrows();
    let denom = gamma * d_avg * d_avg;
    let mut a = Array2::ones((s, s));
    for i in 0..s {
        for j in (i + 1)..s {
            let d2 = subset
                .row(i)
                .iter()
                .zip(subset.row(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
            let v = (-d2 / denom).exp();
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    Ok(a)
}

/// Eigendecomposition of L = D - A sorted ascending.
pub fn laplacian_eigen(affinity: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let s = affinity.nrows();
    if affinity.ncols() != s {
        return Err(DenError::Shape("affinity matrix must be square".into()));
    }
    let mut lap = -affinity.clone();
    for i in 0..s {
        lap[[i, i]] += affinity.row(i).sum();
    }
    crate::eigen::symmetric_eigen(&lap)
}

/// Estimate the cluster count from the Laplacian spectrum and partition the
/// subset by k-means on the first k_raw eigenvectors. Returns (labels, k_raw,
/// eigenvalues ascending).
pub fn estimate_k_and_partition(
    affinity: &Array2<f64>,
    cfg: &SpectralConfig,
    seeds: &SeedStream,
) -> Result<(Vec<usize>, usize, Vec<f64>)> {
    let s = affinity.nrows();
    let (values, vectors) = laplacian_eigen(affinity)?;
    let k_raw = values
        .iter()
        .filter(|&&v| v < cfg.eigen_threshold)
        .count()
        .clamp(1, s);
    let mut features = vectors.slice(ndarray::s![.., ..k_raw]).to_owned();
    // Unit-normalize the rows: indicator-like eigenvectors scale with
    // component size, which otherwise piles small components near the origin
    // and lets k-means merge them.
    for mut row in features.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    let labels = kmeans(
        &features,
        k_raw,
        cfg.kmeans_restarts,
        cfg.kmeans_max_iter,
        seeds,
    )?;
    Ok((labels, k_raw, values))
}

/// k-means with k-means++ seeding; best inertia over restarts wins, ties go
/// to the lowest restart index.
pub fn kmeans(
    points: &Array2<f64>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seeds: &SeedStream,
) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(DenError::Data(format!("k-means k = {k} out of range for n = {n}")));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..restarts {
        let mut rng = seeds.child_indexed("kmeans", restart as u64);
        let (inertia, labels) = kmeans_single(points, k, max_iter, &mut rng);
        if best.as_ref().is_none_or(|(bi, _)| inertia < *bi) {
            best = Some((inertia, labels));
        }
    }
    Ok(best.unwrap().1)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_single(
    points: &Array2<f64>,
    k: usize,
    max_iter: usize,
    rng: &mut impl Rng,
) -> (f64, Vec<usize>) {
    let n = points.nrows();
    let d = points.ncols();
    let row = |i: usize| points.row(i).to_slice().unwrap();

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(row(rng.gen_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target < 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(row(idx).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(row(i), centers.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iter {
        let mut changed = false;
        let mut new_inertia = 0.0;
        for i in 0..n {
            let (best_c, best_d) = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, sq_dist(row(i), ctr)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
            new_inertia += best_d;
        }
        // recompute centers
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (j, v) in row(i).iter().enumerate() {
                sums[labels[i]][j] += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed at the point farthest from its assigned centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(row(a), &centers[labels[a]])
                            .partial_cmp(&sq_dist(row(b), &centers[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = row(far).to_vec();
                labels[far] = c;
                changed = true;
            } else {
                for j in 0..d {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        inertia = new_inertia;
        if !changed {
            break;
        }
    }
    (inertia, labels)
}

/// Label every point by majority vote among its `neighbors` nearest subset
/// points (ties toward the smallest label id), drop clusters that receive no
/// points, and compact surviving labels to consecutive ids.
pub fn knn_label_filter(
    all_points: &Array2<f64>,
    subset_points: &Array2<f64>,
    subset_labels: &[usize],
    neighbors: usize,
    d_avg: f64,
) -> Result<ClusterLabels> {
    let s = subset_points.nrows();
    if subset_labels.len() != s {
        return Err(DenError::Shape("subset labels do not match subset points".into()));
    }
    let neighbors = neighbors.clamp(1, s);
    let max_label = subset_labels.iter().max().copied().unwrap_or(0);
    let n = all_points.nrows();
    let mut labels = vec![0usize; n];
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..s)
            .map(|m| {
                let d2 = all_points
                    .row(i)
                    .iter()
                    .zip(subset_points.row(m).iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
                (d2, m)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; max_label + 1];
        for &(_, m) in dists.iter().take(neighbors) {
            votes[subset_labels[m]] += 1;
        }
        labels[i] = votes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
    }
    // compact surviving labels
    let mut remap = vec![usize::MAX; max_label + 1];
    let mut next = 0usize;
    for &l in &labels {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
    }
    // stable remap: order by original label id, not first occurrence
    let mut survivors: Vec<usize> = (0..=max_label).filter(|&l| remap[l] != usize::MAX).collect();
    survivors.sort_unstable();
    for (new_id, &old) in survivors.iter().enumerate() {
        remap[old] = new_id;
    }
    for l in &mut labels {
        *l = remap[*l];
    }
    Ok(ClusterLabels {
        labels,
        n_clusters: survivors.len(),
        d_avg,
    })
}

/// Summary of one clustering run, for logging and the CLI.
#[derive(Debug, Clone)]
pub struct ClusterReport {
    pub k_raw: usize,
    pub eigenvalues_head: Vec<f64>,
}

/// Full clustering stage: uniform subsample, affinity, spectral partition,
/// KNN label filter.
pub fn cluster(
    points: &Array2<f64>,
    positives: &[(usize, usize)],
    cfg: &SpectralConfig,
    seeds: &SeedStream,
) -> Result<(ClusterLabels, ClusterReport)> {
    let n = points.nrows();
    let s = cfg.subsample_size.clamp(2, n);
    let mut rng = seeds.child("spectral_subsample");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(s);
    idx.sort_unstable();
    let subset = points.select(Axis(0), &idx);

    let mut d_avg = compute_d_avg(points, positives)?;
    if d_avg < D_AVG_FLOOR {
        // degenerate collapsed embedding; fall back to the subset's own scale
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..s {
            for j in (i + 1)..s {
                sum += row_dist(&subset, i, j);
                count += 1;
            }
        }
        d_avg = (sum / count.max(1) as f64).max(D_AVG_FLOOR);
    }

    let affinity = affinity_matrix(&subset, d_avg, cfg.gamma)?;
    let (subset_labels, k_raw, eigenvalues) = estimate_k_and_partition(&affinity, cfg, seeds)?;
    let result = knn_label_filter(
        points,
        &subset,
        &subset_labels,
        cfg.knn_filter_neighbors,
        d_avg,
    )?;
    Ok((
        result,
        ClusterReport {
            k_raw,
            eigenvalues_head: eigenvalues.into_iter().take(10).collect(),
        },
    ))
}

/// Connected components of the affinity graph thresholded at `tol`,
/// by union-find. Test support for the zero-eigenvalue count.
pub fn connected_components(affinity: &Array2<f64>, tol: f64) -> usize {
    let n = affinity.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if affinity[[i, j]] > tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    (0..n)
        .map(|i| find(&mut parent, i))
        .collect::<std::collections::BTreeSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::seeded_rng;
    use crate::metrics::ari;
    use ndarray::array;

    fn gaussian_blobs(
        centers: &[(f64, f64)],
        per: usize,
        sigma: f64,
        seed: u64,
    ) -> (Array2<f64>, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per {
                use rand_distr::Distribution;
                rows.push(cx + normal.sample(&mut rng));
                rows.push(cy + normal.sample(&mut rng));
                labels.push(c);
            }
        }
        (
            Array2::from_shape_vec((labels.len(), 2), rows).unwrap(),
            labels,
        )
    }

    #[test]
    fn d_avg_mean_and_degenerate() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [3.0, 0.0]];
        let d = compute_d_avg(&pts, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(d, 2.0);

        let pts = array![[1.0, 1.0], [1.0, 1.0]];
        let d = compute_d_avg(&pts, &[(0, 1)]).unwrap();
        assert_eq!(d, 0.0);
        assert!(d < D_AVG_FLOOR);

        assert!(compute_d_avg(&pts, &[]).is_err());
    }

    #[test]
    fn d_avg_matches_brute_force() {
        let mut rng = seeded_rng(1);
        use rand::Rng;
        let pts = Array2::from_shape_fn((50, 3), |_| rng.gen_range(-2.0..2.0));
        let pairs: Vec<(usize, usize)> = (0..49).map(|i| (i, i + 1)).collect();
        let want: f64 =
            pairs.iter().map(|&(a, b)| row_dist(&pts, a, b)).sum::<f64>() / pairs.len() as f64;
        assert!((compute_d_avg(&pts, &pairs).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn affinity_properties() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.5, 2.0]];
        let a = affinity_matrix(&pts, 1.0, 1.0).unwrap();
        assert_eq!(a[[0, 0]], 1.0);
        assert!((a[[0, 1]] - (-1.0f64).exp()).abs() < 1e-12); // distance = d_avg
        assert_eq!(a[[0, 1]], a[[1, 0]]);
        let a2 = affinity_matrix(&pts, 1.0, 2.0).unwrap();
        assert!(a2[[0, 2]] > a[[0, 2]]);
    }

    fn block_affinity(blocks: &[usize], within: f64, between: f64) -> Array2<f64> {
        let n: usize = blocks.iter().sum();
        let mut which = Vec::new();
        for (b, &sz) in blocks.iter().enumerate() {
            which.extend(std::iter::repeat(b).take(sz));
        }
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0
            } else if which[i] == which[j] {
                within
            } else {
                between
            }
        })
    }

    #[test]
    fn laplacian_row_sums_and_nonnegative_spectrum() {
        let a = block_affinity(&[3, 4], 0.8, 0.05);
        let (values, _) = laplacian_eigen(&a).unwrap();
        assert!(values.iter().all(|&v| v > -1e-9));
        // row sums of L are zero by construction; first eigenvalue ~0
        assert!(values[0].abs() < 1e-9);
    }

    #[test]
    fn three_disconnected_blocks_give_k3() {
        let a = block_affinity(&[3, 3, 4], 0.9, 0.0);
        let (values, _) = laplacian_eigen(&a).unwrap();
        let zeros = values.iter().filter(|&&v| v.abs() < 1e-12).count();
        assert_eq!(zeros, 3);
        assert_eq!(connected_components(&a, 1e-12), 3);

        let cfg = SpectralConfig::default();
        let (labels, k_raw, _) =
            estimate_k_and_partition(&a, &cfg, &SeedStream::new(0)).unwrap();
        assert_eq!(k_raw, 3);
        assert_eq!(ari(&labels, &[0, 0, 0, 1, 1, 1, 2, 2, 2, 2]).unwrap(), 1.0);
    }

    #[test]
    fn uniform_clique_gives_k1() {
        let a = block_affinity(&[6], 0.9, 0.9);
        let cfg = SpectralConfig::default();
        let (labels, k_raw, _) =
            estimate_k_and_partition(&a, &cfg, &SeedStream::new(0)).unwrap();
        assert_eq!(k_raw, 1);
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn weakly_joined_blocks_give_k2() {
        let mut a = block_affinity(&[3, 3], 1.0, 0.0);
        a[[2, 3]] = 1e-6;
        a[[3, 2]] = 1e-6;
        let (values, _) = laplacian_eigen(&a).unwrap();
        assert!(values[1] < 1e-2 && values[1] > 0.0);
        let cfg = SpectralConfig::default();
        let (_, k_raw, _) = estimate_k_and_partition(&a, &cfg, &SeedStream::new(0)).unwrap();
        assert_eq!(k_raw, 2);
    }

    #[test]
    fn zero_eigen_count_matches_components_random() {
        let mut rng = seeded_rng(12);
        use rand::Rng;
        for trial in 0..10 {
            let n = 12;
            let mut a = Array2::zeros((n, n));
            for i in 0..n {
                a[[i, i]] = 1.0;
                for j in (i + 1)..n {
                    let v = if rng.gen_bool(0.2) {
                        rng.gen_range(0.2..1.0)
                    } else {
                        0.0
                    };
                    a[[i, j]] = v;
                    a[[j, i]] = v;
                }
            }
            let (values, _) = laplacian_eigen(&a).unwrap();
            let zeros = values.iter().filter(|&&v| v.abs() < 1e-9).count();
            assert_eq!(zeros, connected_components(&a, 1e-12), "trial {trial}");
        }
    }

    #[test]
    fn knn_filter_majority_overrules_flip() {
        let (pts, _) = gaussian_blobs(&[(0.0, 0.0)], 120, 0.3, 3);
        let mut labels = vec![0usize; 120];
        labels[17] = 1; // one flipped subset label
        let out = knn_label_filter(&pts, &pts, &labels, 50, 1.0).unwrap();
        assert!(out.labels.iter().all(|&l| l == 0));
        assert_eq!(out.n_clusters, 1);
    }

    #[test]
    fn knn_filter_removes_micro_cluster() {
        let (pts, _) = gaussian_blobs(&[(0.0, 0.0)], 500, 0.5, 4);
        let mut labels = vec![0usize; 500];
        labels[10] = 1;
        labels[11] = 1;
        let out = knn_label_filter(&pts, &pts, &labels, 50, 1.0).unwrap();
        assert_eq!(out.n_clusters, 1);
        assert!(out.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn knn_filter_identity_with_one_neighbor() {
        let (pts, labels) = gaussian_blobs(&[(0.0, 0.0), (10.0, 0.0)], 20, 0.2, 5);
        let out = knn_label_filter(&pts, &pts, &labels, 1, 1.0).unwrap();
        assert_eq!(out.labels, labels);
    }

    #[test]
    fn knn_filter_never_adds_labels() {
        let mut rng = seeded_rng(6);
        use rand::Rng;
        for _ in 0..20 {
            let pts = Array2::from_shape_fn((60, 2), |_| rng.gen_range(-1.0..1.0));
            let labels: Vec<usize> = (0..60).map(|_| rng.gen_range(0..5)).collect();
            let distinct_in = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
            let out = knn_label_filter(&pts, &pts, &labels, 7, 1.0).unwrap();
            assert!(out.n_clusters <= distinct_in);
        }
    }

    #[test]
    fn cluster_three_blobs_exactly() {
        let (pts, truth) = gaussian_blobs(&[(0.0, 0.0), (10.0, 0.0), (5.0, 9.0)], 150, 0.5, 7);
        // positives: consecutive points within each blob
        let mut positives = Vec::new();
        for b in 0..3 {
            for i in 0..149 {
                positives.push((b * 150 + i, b * 150 + i + 1));
            }
        }
        let cfg = SpectralConfig::default();
        let (out, report) = cluster(&pts, &positives, &cfg, &SeedStream::new(1)).unwrap();
        assert_eq!(out.n_clusters, 3, "k_raw was {}", report.k_raw);
        assert_eq!(ari(&out.labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn cluster_single_blob() {
        let (pts, _) = gaussian_blobs(&[(0.0, 0.0)], 200, 0.5, 8);
        let positives: Vec<(usize, usize)> = (0..199).map(|i| (i, i + 1)).collect();
        let cfg = SpectralConfig::default();
        let (out, _) = cluster(&pts, &positives, &cfg, &SeedStream::new(2)).unwrap();
        assert_eq!(out.n_clusters, 1);
    }

    #[test]
    fn cluster_deterministic() {
        let (pts, _) = gaussian_blobs(&[(0.0, 0.0), (8.0, 0.0)], 80, 0.4, 9);
        let positives: Vec<(usize, usize)> = (0..159).map(|i| (i, i + 1)).collect();
        let cfg = SpectralConfig::default();
        let (a, _) = cluster(&pts, &positives, &cfg, &SeedStream::new(5)).unwrap();
        let (b, _) = cluster(&pts, &positives, &cfg, &SeedStream::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
