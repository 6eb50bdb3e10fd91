//! Dense symmetric linear algebra for the (K-1)*J parameter blocks.
//!
//! The information matrices handled here are at most a few hundred rows, so
//! plain O(n^3) routines are fast, dependency-free and bit-reproducible.

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky expects a square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower Cholesky factor.
pub fn cholesky_solve_vec(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `L L^T X = B` column by column.
pub fn cholesky_solve_mat(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        let x = cholesky_solve_vec(l, &col.to_owned());
        out.column_mut(j).assign(&x);
    }
    out
}

/// Solves `A X = B` with Gaussian elimination and partial pivoting.
/// Used by the Kronecker-form engine so the two GMSE routes do not share a
/// factorisation. Returns `None` on a (numerically) singular matrix.
pub fn gauss_solve(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.nrows());
    let m = b.ncols();
    let mut aug = Array2::<f64>::zeros((n, n + m));
    aug.slice_mut(ndarray::s![.., ..n]).assign(a);
    aug.slice_mut(ndarray::s![.., n..]).assign(b);
    for col in 0..n {
        let mut piv = col;
        let mut best = aug[[col, col]].abs();
        for r in col + 1..n {
            let v = aug[[r, col]].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !best.is_finite() || best == 0.0 {
            return None;
        }
        if piv != col {
            for c in 0..n + m {
                aug.swap([piv, c], [col, c]);
            }
        }
        let d = aug[[col, col]];
        for r in col + 1..n {
            let f = aug[[r, col]] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n + m {
                aug[[r, c]] -= f * aug[[col, c]];
            }
        }
    }
    let mut x = Array2::<f64>::zeros((n, m));
    for c in 0..m {
        for r in (0..n).rev() {
            let mut s = aug[[r, n + c]];
            for k in r + 1..n {
                s -= aug[[r, k]] * x[[k, c]];
            }
            x[[r, c]] = s / aug[[r, r]];
        }
    }
    Some(x)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in columns.
pub fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frob(&m)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = Array1::from_iter((0..n).map(|i| m[[i, i]]));
    (eig, v)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, truncating
/// eigenvalues below `rel_tol * max|eigenvalue|`.
pub fn pinv_sym(a: &Array2<f64>, rel_tol: f64) -> Array2<f64> {
    let (eig, v) = jacobi_eigh(a);
    let n = a.nrows();
    let cutoff = rel_tol * eig.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let mut out = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        if eig[k].abs() <= cutoff {
            continue;
        }
        let inv = 1.0 / eig[k];
        for i in 0..n {
            let vik = v[[i, k]];
            if vik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[[i, j]] += inv * vik * v[[j, k]];
            }
        }
    }
    out
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
