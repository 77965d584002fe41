//! Small dense decompositions: cyclic Jacobi eigensolver, Gram–Schmidt QR and
//! a Cholesky solver for ridge systems.

use super::{Matrix, NumericError};

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, aligned with `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn symmetric_eigen(c: &Matrix) -> Result<SymmetricEigen, NumericError> {
    let n = c.rows();
    if c.cols() != n {
        return Err(NumericError::Shape {
            op: "symmetric_eigen",
            left: c.shape(),
            right: c.shape(),
        });
    }
    let scale = c.as_slice().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (c.get(i, j) - c.get(j, i)).abs() > 1e-10 * scale {
                return Err(NumericError::Contract(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    c.get(i, j),
                    c.get(j, i)
                )));
            }
        }
    }

    let mut a: Vec<f64> = c.as_slice().to_vec();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let mut v = Matrix::identity(n).into_vec();
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, v[k * n + src]);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Orthonormal basis for the column space of `a` (classical Gram–Schmidt run
/// twice). Columns that vanish after projection are returned as zeros.
pub fn orthonormalize_columns(a: &Matrix) -> Matrix {
    let (m, k) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| a.col(j)).collect();
    let scale = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    for j in 0..k {
        let original = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (y, x) in tail[0].iter_mut().zip(&head[i]) {
                    *y -= dot * x;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) || norm <= 1e-10 * original {
            cols[j].iter_mut().for_each(|v| *v = 0.0);
        } else {
            cols[j].iter_mut().for_each(|v| *v /= norm);
        }
    }
    let mut out = Matrix::zeros(m, k);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            out.set(i, j, v);
        }
    }
    out
}

/// Solves `a · x = b` for symmetric positive definite `a`.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericError> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(NumericError::Shape {
            op: "cholesky_solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(NumericError::Contract(format!(
                        "matrix not positive definite at pivot {i}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let m = b.cols();
    let mut x = b.clone();
    for c in 0..m {
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l[i * n + k] * x.get(k, c);
            }
            x.set(i, c, s / l[i * n + i]);
        }
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= l[k * n + i] * x.get(k, c);
            }
            x.set(i, c, s / l[i * n + i]);
        }
    }
    Ok(x)
}
