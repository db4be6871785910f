//! Positive/negative training-pair graph construction.
//!
//! Positives come from a k-nearest-neighbor graph pruned to shared-nearest-
//! neighbor edges (mutual kNN membership plus at least one shared neighbor),
//! with a fallback that gives every sample at least `j` positives. Negatives
//! are drawn per sample with probability proportional to distance, and are
//! never pruned.

use crate::data_io::{Dataset, RunConfig, SeedStream};
use crate::error::{DenError, Result};
use ndarray::ArrayView1;
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeSet;

/// Above this sample count, negative sampling draws candidates from a random
/// pool instead of all other samples.
pub const NEGATIVE_POOL_THRESHOLD: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairGraph {
    /// Deduplicated (i, j) with i < j.
    pub positives: Vec<(usize, usize)>,
    /// k draws per source sample; duplicates across sources permitted.
    pub negatives: Vec<(usize, usize)>,
    pub n_samples: usize,
}

#[derive(Debug, Clone)]
pub struct KnnIndex {
    /// Row i: the k nearest other samples, ascending distance, ties toward
    /// lower index.
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

impl KnnIndex {
    pub fn k(&self) -> usize {
        self.neighbors.first().map_or(0, Vec::len)
    }
}

pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact brute-force KNN, O(N^2) distances, ties broken by lower index.
pub fn build_knn(data: &Dataset, k: usize) -> Result<KnnIndex> {
    let n = data.n_samples();
    if k >= n {
        return Err(DenError::Data(format!("k = {k} must be below N = {n}")));
    }
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&m| m != i)
                .map(|m| (euclidean(data.samples.row(i), data.samples.row(m)), m))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            dists.truncate(k);
            let (ds, ns): (Vec<f64>, Vec<usize>) = dists.into_iter().unzip();
            (ns, ds)
        })
        .collect();
    let (neighbors, distances) = rows.into_iter().unzip();
    Ok(KnnIndex {
        neighbors,
        distances,
    })
}

/// Shared-nearest-neighbor positive pairs: keep edge (i, m) iff the kNN
/// membership is mutual and the two top-k lists intersect; then top each
/// under-connected sample up to `j` edges with its closest neighbors.
pub fn build_positive_pairs(knn: &KnnIndex, j: usize) -> Result<Vec<(usize, usize)>> {
    if j >= knn.k() {
        return Err(DenError::Config(format!(
            "j = {j} must be below k = {}",
            knn.k()
        )));
    }
    let n = knn.neighbors.len();
    let sets: Vec<BTreeSet<usize>> = knn
        .neighbors
        .iter()
        .map(|row| row.iter().copied().collect())
        .collect();

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..n {
        for &m in &knn.neighbors[i] {
            if m < i {
                continue; // handled from the other side
            }
            let mutual = sets[m].contains(&i);
            let shared = sets[i].intersection(&sets[m]).next().is_some();
            if mutual && shared {
                edges.insert((i, m));
            }
        }
    }

    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    // Fallback: closest neighbors in ascending distance order until degree j.
    for i in 0..n {
        for &m in &knn.neighbors[i] {
            if degree[i] >= j {
                break;
            }
            let key = (i.min(m), i.max(m));
            if edges.insert(key) {
                degree[i] += 1;
                degree[m] += 1;
            }
        }
    }
    Ok(edges.into_iter().collect())
}

/// Distance-weighted negative pairs: k draws without replacement per sample,
/// selection probability proportional to distance. Candidates come from all
/// other samples, or from a `candidate_pool`-sized random subset for large N.
pub fn build_negative_pairs(
    data: &Dataset,
    k: usize,
    seeds: &SeedStream,
    candidate_pool: Option<usize>,
) -> Result<Vec<(usize, usize)>> {
    let n = data.n_samples();
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut rng = seeds.child_indexed("negatives", i as u64);
        let candidates: Vec<usize> = match candidate_pool {
            Some(pool) if pool < n - 1 => {
                // uniform subset without replacement, excluding i
                let mut picked = BTreeSet::new();
                while picked.len() < pool {
                    let c = rng.gen_range(0..n);
                    if c != i {
                        picked.insert(c);
                    }
                }
                picked.into_iter().collect()
            }
            _ => (0..n).filter(|&m| m != i).collect(),
        };
        if candidates.len() < k {
            return Err(DenError::Data(format!(
                "candidate pool of {} is below k = {k}",
                candidates.len()
            )));
        }
        let mut weights: Vec<f64> = candidates
            .iter()
            .map(|&m| euclidean(data.samples.row(i), data.samples.row(m)))
            .collect();
        // Coincident duplicates carry zero distance; give them a tiny weight
        // so exhaustive draws (k = pool size) stay well-defined.
        let max_w = weights.iter().cloned().fold(0.0, f64::max);
        let floor = if max_w > 0.0 { max_w * 1e-12 } else { 1.0 };
        for w in &mut weights {
            if *w <= 0.0 {
                *w = floor;
            }
        }
        let mut alive: Vec<usize> = (0..candidates.len()).collect();
        for _ in 0..k {
            let total: f64 = alive.iter().map(|&c| weights[c]).sum();
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = alive.len() - 1;
            for (pos, &c) in alive.iter().enumerate() {
                target -= weights[c];
                if target < 0.0 {
                    chosen = pos;
                    break;
                }
            }
            let c = alive.swap_remove(chosen);
            out.push((i, candidates[c]));
        }
    }
    Ok(out)
}

/// Full graph construction: KNN, SNN positives, distance-weighted negatives.
/// k is clamped to N - 1 on small datasets.
pub fn build_pair_graph(data: &Dataset, cfg: &RunConfig, seeds: &SeedStream) -> Result<PairGraph> {
    let n = data.n_samples();
    let k = cfg.k.min(n - 1);
    let j = cfg.j.min(k.saturating_sub(1)).max(1);
    let knn = build_knn(data, k)?;
    let positives = build_positive_pairs(&knn, j)?;
    let pool = if n > NEGATIVE_POOL_THRESHOLD {
        Some(NEGATIVE_POOL_THRESHOLD)
    } else {
        None
    };
    let negatives = build_negative_pairs(data, k, seeds, pool)?;
    Ok(PairGraph {
        positives,
        negatives,
        n_samples: n,
    })
}

/// Two-section edge-list dump: `#positives`, `#negatives`, one `i j` per line.
pub fn write_edge_list(graph: &PairGraph, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut out = String::from("#positives\n");
    for &(a, b) in &graph.positives {
        out.push_str(&format!("{a} {b}\n"));
    }
    out.push_str("#negatives\n");
    for &(a, b) in &graph.negatives {
        out.push_str(&format!("{a} {b}\n"));
    }
    std::fs::write(path.as_ref(), out)
        .map_err(|e| DenError::io(path.as_ref().display().to_string(), e))
}
