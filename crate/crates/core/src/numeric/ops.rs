//! Forward kernels shared by plain matrix code and the differentiation graph.

use super::{Matrix, NumericError};

/// `a · b`.
///
/// ikj loop order; zero entries of `a` are skipped, which also keeps masked
/// attention weights from touching the values they mask.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericError> {
    if a.cols() != b.rows() {
        return Err(NumericError::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let bs = b.as_slice();
    for (i, out_row) in out.chunks_exact_mut(n.max(1)).enumerate().take(m) {
        let a_row = a.row(i);
        for (p, &aip) in a_row.iter().enumerate().take(k) {
            if aip == 0.0 {
                continue;
            }
            let b_row = &bs[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(Matrix::from_raw(m, n, out))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericError> {
    if a.cols() != b.cols() {
        return Err(NumericError::Shape {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, n) = (a.rows(), b.rows());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out.push(ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum());
        }
    }
    Ok(Matrix::from_raw(m, n, out))
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericError> {
    if a.rows() != b.rows() {
        return Err(NumericError::Shape {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, n) = (a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for r in 0..a.rows() {
        let ar = a.row(r);
        let br = b.row(r);
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
    Ok(Matrix::from_raw(m, n, out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    softmax_rows_masked(a, false)
}

/// Row-wise softmax; with `causal`, row `i` only spans columns `0..=i` and
/// the remaining entries are exactly zero.
pub fn softmax_rows_masked(a: &Matrix, causal: bool) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let row = a.row(r);
        let width = if causal { (r + 1).min(row.len()) } else { row.len() };
        let live = &row[..width];
        let max = live.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = out.row_mut(r);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(live) {
            *d = (v - max).exp();
            total += *d;
        }
        for d in dst[..width].iter_mut() {
            *d /= total;
        }
    }
    out
}

/// Per-row statistics retained from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Row-wise layer normalization with population variance.
pub fn layer_norm(
    a: &Matrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<Matrix, NumericError> {
    layer_norm_with_cache(a, gain, bias, eps).map(|(out, _)| out)
}

pub fn layer_norm_with_cache(
    a: &Matrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Matrix, LayerNormCache), NumericError> {
    let n = a.cols();
    if gain.len() != n || bias.len() != n {
        return Err(NumericError::Shape {
            op: "layer_norm",
            left: a.shape(),
            right: (gain.len(), bias.len()),
        });
    }
    if eps <= 0.0 {
        return Err(NumericError::Contract("layer_norm eps must be positive".into()));
    }
    let mut normalized = Matrix::zeros(a.rows(), n);
    let mut out = Matrix::zeros(a.rows(), n);
    let mut inv_std = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let row = a.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let xh = normalized.row_mut(r);
        for (x, &v) in xh.iter_mut().zip(row) {
            *x = (v - mean) * inv;
        }
        let xh = normalized.row(r).to_vec();
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = xh[j] * gain[j] + bias[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gaussian, SeededRng};

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_small_cases() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(11);
        let a = gaussian(&mut rng, 3, 4);
        let b = gaussian(&mut rng, 4, 2);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)) <= 1e-12);
        assert!(matmul_nt(&a, &b.transpose()).unwrap().max_abs_diff(&naive(&a, &b)) <= 1e-12);
        assert!(matmul_tn(&a.transpose(), &b).unwrap().max_abs_diff(&naive(&a, &b)) <= 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap());
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        for c in [-50.0, 0.0, 3.5, 700.0] {
            let s = softmax_rows(&Matrix::from_rows(&[vec![c, c, c]]).unwrap());
            for v in s.as_slice() {
                assert!((v - 1.0 / 3.0).abs() <= 1e-12);
            }
        }
        // 1/(1+e^-1000) rounds to 1.0 exactly; e^-1000 underflows to 0.
        let s = softmax_rows(&Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        assert_eq!(s.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn causal_softmax_zeroes_future() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let s = softmax_rows_masked(&a, true);
        assert_eq!(s.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(s.get(1, 2), 0.0);
        assert!((s.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let out = layer_norm(
            &Matrix::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap(),
            &[1.0; 3],
            &[0.0; 3],
            1e-5,
        )
        .unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0, 0.0]);
        let out = layer_norm(
            &Matrix::from_rows(&[vec![-1.0, 1.0]]).unwrap(),
            &[1.0; 2],
            &[0.0; 2],
            1e-14,
        )
        .unwrap();
        assert!((out.get(0, 0) + 1.0).abs() < 1e-12 && (out.get(0, 1) - 1.0).abs() < 1e-12);

        let mut rng = SeededRng::new(3);
        let a = gaussian(&mut rng, 1, 16).scale(4.0);
        let eps = 1e-5;
        let out = layer_norm(&a, &[1.0; 16], &[0.0; 16], eps).unwrap();
        let row = out.row(0);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        let raw = a.row(0);
        let raw_mean = raw.iter().sum::<f64>() / 16.0;
        let raw_var = raw.iter().map(|v| (v - raw_mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-12);
        assert!((var - raw_var / (raw_var + eps)).abs() <= 1e-12);
        assert!(var <= 1.0);

        assert!(layer_norm(&a, &[1.0; 3], &[0.0; 16], eps).is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8);
        }
    }
}
