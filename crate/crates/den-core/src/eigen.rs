//! Symmetric eigendecomposition: Householder tridiagonalization followed by
//! the implicit-QL iteration with Wilkinson shifts (the classic EISPACK
//! tred2/tql2 pair). Used for the graph Laplacian, where the spectrum is
//! highly degenerate near zero and general-purpose QR iterations can fail to
//! converge to orthogonal eigenvectors.

use crate::error::{DenError, Result};
use ndarray::Array2;

const MAX_QL_ITERS: usize = 64;

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors as
/// columns, for a symmetric matrix.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(DenError::Shape("eigen input must be square".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let mut v = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;

    // sort ascending, permuting eigenvector columns alongside
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].partial_cmp(&d[y]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    Ok((values, vectors))
}

/// Householder reduction to tridiagonal form, accumulating the orthogonal
/// transformation in `v`. On exit `d` holds the diagonal and `e` the
/// subdiagonal (in e[1..]).
fn tred2(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
                v[[j, i]] = 0.0;
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[[j, i]] = f;
                let mut g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[[k, j]] -= f * e[k] + g * d[k];
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..(n - 1) {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for (k, item) in d.iter_mut().enumerate().take(i + 1) {
                *item = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    v[[k, j]] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = 0.0;
    }
    v[[n - 1, n - 1]] = 1.0;
    e[0] = 0.0;
}

/// Implicit-QL iteration with Wilkinson shifts on the tridiagonal (d, e),
/// applying every rotation to the columns of `v`.
fn tql2(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERS {
                    return Err(DenError::Numerical(format!(
                        "eigen QL iteration failed to converge at index {l}"
                    )));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0f64;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let h = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * h;
                        v[[k, i]] = c * v[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::seeded_rng;
    use rand::Rng;

    fn residual(a: &Array2<f64>, values: &[f64], vectors: &Array2<f64>) -> f64 {
        let av = a.dot(vectors);
        let n = a.nrows();
        let mut worst = 0.0f64;
        for c in 0..n {
            let mut r2 = 0.0;
            for r in 0..n {
                let diff = av[[r, c]] - values[c] * vectors[[r, c]];
                r2 += diff * diff;
            }
            worst = worst.max(r2.sqrt());
        }
        worst
    }

    fn orthogonality(vectors: &Array2<f64>) -> f64 {
        let g = vectors.t().dot(vectors);
        let n = g.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[[i, j]] - want).abs());
            }
        }
        worst
    }

    #[test]
    fn diag_matrix_exact() {
        let a = ndarray::array![[3.0, 0.0], [0.0, -1.0]];
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert_eq!(vals, vec![-1.0, 3.0]);
        assert!(residual(&a, &vals, &vecs) < 1e-14);
    }

    #[test]
    fn random_symmetric_residuals() {
        let mut rng = seeded_rng(5);
        for n in [1usize, 2, 5, 20, 60] {
            let mut a = Array2::zeros((n, n));
            for i in 0..n {
                for j in i..n {
                    let v = rng.gen_range(-2.0..2.0);
                    a[[i, j]] = v;
                    a[[j, i]] = v;
                }
            }
            let (vals, vecs) = symmetric_eigen(&a).unwrap();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            assert!(residual(&a, &vals, &vecs) < 1e-10, "n = {n}");
            assert!(orthogonality(&vecs) < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn degenerate_block_diagonal() {
        // Disconnected Laplacian: zero eigenvalues with multiplicity 3 and
        // eigenvectors constant within each block.
        let mut a = Array2::zeros((9, 9));
        for b in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let (r, c) = (3 * b + i, 3 * b + j);
                    a[[r, c]] = if i == j { 2.0 } else { -1.0 };
                }
            }
        }
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert!(vals.iter().take(3).all(|v| v.abs() < 1e-12));
        assert!(vals[3] > 1.0);
        assert!(residual(&a, &vals, &vecs) < 1e-12);
        assert!(orthogonality(&vecs) < 1e-12);
        // zero modes constant per block
        for c in 0..3 {
            for b in 0..3 {
                let base = vecs[[3 * b, c]];
                for i in 1..3 {
                    assert!((vecs[[3 * b + i, c]] - base).abs() < 1e-10);
                }
            }
        }
    }
}
