//! Clustering evaluation: optimal-assignment accuracy, normalized mutual
//! information, and adjusted Rand index.

use crate::error::{DenError, Result};
use std::collections::BTreeMap;

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(DenError::Shape(format!(
            "label vectors differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(DenError::Data("empty label vectors".into()));
    }
    Ok(())
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let ids: Vec<usize> = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<usize>>, usize, usize) {
    let (p, np) = compact(pred);
    let (t, nt) = compact(truth);
    let mut table = vec![vec![0usize; nt]; np];
    for (a, b) in p.iter().zip(t.iter()) {
        table[*a][*b] += 1;
    }
    (table, np, nt)
}

/// Minimum-cost assignment on a square cost matrix (Hungarian algorithm with
/// potentials). Returns, for each row, its assigned column.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximal-matching clustering accuracy via optimal assignment over the
/// confusion matrix. Returns `None` when the numbers of distinct predicted
/// and true labels differ, in which case accuracy is not reported.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<Option<f64>> {
    check_lengths(pred, truth)?;
    let (table, np, nt) = contingency(pred, truth);
    if np != nt {
        return Ok(None);
    }
    let max_count = pred.len() as f64;
    let cost: Vec<Vec<f64>> = table
        .iter()
        .map(|row| row.iter().map(|&c| max_count - c as f64).collect())
        .collect();
    let assignment = hungarian(&cost);
    let matched: usize = assignment
        .iter()
        .enumerate()
        .map(|(row, &col)| table[row][col])
        .sum();
    Ok(Some(matched as f64 / pred.len() as f64))
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information I(pred; truth) / sqrt(H(pred) H(truth)),
/// natural logs, with 0/0 defined as 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let (table, np, nt) = contingency(pred, truth);
    let n = pred.len() as f64;
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..nt).map(|j| (0..np).map(|i| table[i][j]).sum()).collect();
    let mut mi = 0.0;
    for i in 0..np {
        for j in 0..nt {
            let c = table[i][j];
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * ((n * c as f64) / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }
    let h = (entropy(&row_sums, n) * entropy(&col_sums, n)).sqrt();
    if h == 0.0 {
        return Ok(0.0);
    }
    Ok((mi / h).clamp(0.0, 1.0))
}

/// Adjusted Rand index between two partitions.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let (table, np, nt) = contingency(pred, truth);
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| choose2(c))
        .sum();
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..nt).map(|j| (0..np).map(|i| table[i][j]).sum()).collect();
    let sum_rows: f64 = row_sums.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&c| choose2(c)).sum();
    let total = choose2(pred.len());
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return Ok(1.0); // both partitions trivial
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn accuracy_permutation_of_labels() {
        let acc = accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(acc, Some(1.0));
    }

    #[test]
    fn accuracy_half_match() {
        let acc = accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(acc, Some(0.5));
    }

    #[test]
    fn accuracy_identity() {
        let acc = accuracy(&[0, 1, 2, 0], &[0, 1, 2, 0]).unwrap();
        assert_eq!(acc, Some(1.0));
    }

    #[test]
    fn accuracy_refused_on_cluster_count_mismatch() {
        let acc = accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(acc, None);
    }

    #[test]
    fn accuracy_length_mismatch_errors() {
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_identical_and_constant() {
        assert_eq!(nmi(&[0, 1, 2, 0], &[5, 7, 9, 5]).unwrap(), 1.0);
        assert_eq!(nmi(&[3, 3, 3, 3], &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_independent_partitions_near_zero() {
        let mut rng = crate::data_io::seeded_rng(2);
        let n = 10_000;
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        assert!(nmi(&a, &b).unwrap() <= 0.05);
    }

    #[test]
    fn ari_perfect_and_random() {
        assert_eq!(ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let mut rng = crate::data_io::seeded_rng(3);
        let n = 5000;
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        assert!(ari(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn hungarian_small_exact() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let assign = hungarian(&cost);
        let total: f64 = assign.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        assert_eq!(total, 5.0); // 1 + 2 + 2
    }

    proptest! {
        #[test]
        fn accuracy_invariant_under_permutation(
            labels in proptest::collection::vec(0usize..5, 10..60),
            seed in 0u64..1000,
        ) {
            let mut rng = crate::data_io::seeded_rng(seed);
            let truth: Vec<usize> = labels.iter().map(|_| rng.gen_range(0..5)).collect();
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let a = accuracy(&labels, &truth).unwrap();
            let b = accuracy(&permuted, &truth).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn nmi_symmetric_and_bounded(
            a in proptest::collection::vec(0usize..4, 5..50),
            b_seed in 0u64..100,
        ) {
            let mut rng = crate::data_io::seeded_rng(b_seed);
            let b: Vec<usize> = a.iter().map(|_| rng.gen_range(0..4)).collect();
            let x = nmi(&a, &b).unwrap();
            let y = nmi(&b, &a).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
