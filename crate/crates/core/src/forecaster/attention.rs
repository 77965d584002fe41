use crate::numeric::ops::{matmul, matmul_nt, softmax_rows_masked};
use crate::numeric::{Graph, Matrix, NodeId, NumericError};

/// Scaled dot-product attention `softmax(QKᵀ/√d_k) V`. With `causal`, query
/// `i` only sees keys `0..=i`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, causal: bool) -> Result<Matrix, NumericError> {
    if k.rows() != v.rows() {
        return Err(NumericError::Shape {
            op: "attention(k, v)",
            left: k.shape(),
            right: v.shape(),
        });
    }
    let scores = matmul_nt(q, k)?.scale(1.0 / (q.cols() as f64).sqrt());
    matmul(&softmax_rows_masked(&scores, causal), v)
}

/// Attention over a row-stacked batch of `batch` sequences. `q` holds
/// `batch·q_len` rows, `k` and `v` hold `batch·kv_len` rows; columns are split
/// evenly across `heads`. Each sequence attends only within itself.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    batch: usize,
    q_len: usize,
    kv_len: usize,
    heads: usize,
    causal: bool,
) -> Result<NodeId, NumericError> {
    let d = g.value(q).cols();
    if g.value(k).shape() != g.value(v).shape() || g.value(k).cols() != d {
        return Err(NumericError::Shape {
            op: "multi_head_attention",
            left: g.value(q).shape(),
            right: g.value(k).shape(),
        });
    }
    if g.value(q).rows() != batch * q_len || g.value(k).rows() != batch * kv_len {
        return Err(NumericError::Contract(format!(
            "attention rows {} / {} do not match batch {batch} x ({q_len}, {kv_len})",
            g.value(q).rows(),
            g.value(k).rows()
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut per_seq = Vec::with_capacity(batch);
    for b in 0..batch {
        let qb = g.slice_rows(q, b * q_len, q_len)?;
        let kb = g.slice_rows(k, b * kv_len, kv_len)?;
        let vb = g.slice_rows(v, b * kv_len, kv_len)?;
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (qb, kb, vb)
            } else {
                (
                    g.slice_cols(qb, h * dh, dh)?,
                    g.slice_cols(kb, h * dh, dh)?,
                    g.slice_cols(vb, h * dh, dh)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores, causal);
            per_head.push(g.matmul(weights, vh)?);
        }
        per_seq.push(if heads == 1 {
            per_head[0]
        } else {
            g.concat_cols(&per_head)?
        });
    }
    if batch == 1 {
        Ok(per_seq[0])
    } else {
        g.concat_rows(&per_seq)
    }
}
