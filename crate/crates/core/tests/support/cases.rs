//! Finite-difference cases shared by the gradient tests and the acceptance run.

use std::sync::Arc;

use pcaformer::dataset::{WindowSet, WindowSpec};
use pcaformer::forecaster::{multi_head_attention, ForecastModel, TransformerConfig};
use pcaformer::numeric::{gaussian, Graph, NodeId};
use pcaformer::{Matrix, SeededRng};

use super::fd::{check_model, check_op};

pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

fn weighted(g: &mut Graph, out: NodeId, seed: u64) -> NodeId {
    let (r, c) = g.value(out).shape();
    let w = g.constant(gaussian(&mut SeededRng::new(seed), r, c));
    let y = g.mul(out, w).unwrap();
    g.sum(y)
}

fn rand(seed: u64, r: usize, c: usize) -> Matrix {
    gaussian(&mut SeededRng::new(seed), r, c)
}

pub fn matmul() -> f64 {
    let (a, b) = (rand(1, 4, 3), rand(2, 3, 5));
    let plain = check_op(&[a.clone(), b], |g, x| {
        let y = g.matmul(x[0], x[1]).unwrap();
        weighted(g, y, 9)
    });
    let nt = check_op(&[a, rand(3, 6, 3)], |g, x| {
        let y = g.matmul_nt(x[0], x[1]).unwrap();
        weighted(g, y, 9)
    });
    plain.max(nt)
}

pub fn elementwise() -> f64 {
    let (a, b) = (rand(4, 3, 4), rand(5, 3, 4));
    let arith = check_op(&[a.clone(), b], |g, x| {
        let s = g.add(x[0], x[1]).unwrap();
        let d = g.sub(s, x[1]).unwrap();
        let m = g.mul(d, x[1]).unwrap();
        let y = g.scale(m, -0.7);
        weighted(g, y, 10)
    });
    let gelu = check_op(std::slice::from_ref(&a), |g, x| {
        let y = g.gelu(x[0]);
        weighted(g, y, 11)
    });
    // keep entries away from the kink at zero
    let shifted = a.map(|v| if v.abs() < 0.1 { v + 0.5 } else { v });
    let relu = check_op(&[shifted], |g, x| {
        let y = g.relu(x[0]);
        weighted(g, y, 12)
    });
    arith.max(gelu).max(relu)
}

pub fn bias_broadcast() -> f64 {
    check_op(&[rand(6, 5, 3), rand(7, 1, 3)], |g, x| {
        let y = g.add_row(x[0], x[1]).unwrap();
        weighted(g, y, 13)
    })
}

pub fn softmax(causal: bool) -> f64 {
    check_op(&[rand(8, 5, 5)], |g, x| {
        let y = g.softmax_rows(x[0], causal);
        weighted(g, y, 14)
    })
}

pub fn layer_norm() -> f64 {
    let gain = rand(10, 1, 6).map(|v| 1.0 + 0.3 * v);
    check_op(&[rand(9, 4, 6), gain, rand(11, 1, 6)], |g, x| {
        let y = g.layer_norm(x[0], x[1], x[2], 1e-5).unwrap();
        weighted(g, y, 15)
    })
}

pub fn structural() -> f64 {
    check_op(&[rand(12, 6, 4), rand(13, 6, 2)], |g, x| {
        let t = g.transpose(x[0]);
        let t = g.transpose(t);
        let c = g.slice_cols(t, 1, 2).unwrap();
        let cat = g.concat_cols(&[x[0], x[1], c]).unwrap();
        let top = g.slice_rows(cat, 1, 3).unwrap();
        let stacked = g.concat_rows(&[top, cat]).unwrap();
        let picked = g.gather_rows(stacked, &[0, 4, 4, 8, 2]).unwrap();
        weighted(g, picked, 16)
    })
}

pub fn mse_loss() -> f64 {
    let target = rand(14, 4, 2);
    check_op(&[rand(15, 4, 2)], move |g, x| g.mse_loss(x[0], target.clone()).unwrap())
}

pub fn attention(causal: bool) -> f64 {
    let inputs = [rand(16, 6, 4), rand(17, 4, 4), rand(18, 4, 4)];
    check_op(&inputs, |g, x| {
        let (q_len, kv_len) = if causal { (2, 2) } else { (3, 2) };
        let q = if causal { g.slice_rows(x[0], 0, 4).unwrap() } else { x[0] };
        let y = multi_head_attention(g, q, x[1], x[2], 2, q_len, kv_len, 2, causal).unwrap();
        weighted(g, y, 19)
    })
}

/// Every op case with its worst relative error.
pub fn all_ops() -> Vec<(&'static str, f64)> {
    vec![
        ("matmul", matmul()),
        ("elementwise", elementwise()),
        ("bias_broadcast", bias_broadcast()),
        ("softmax", softmax(false)),
        ("softmax_causal", softmax(true)),
        ("layer_norm", layer_norm()),
        ("structural", structural()),
        ("mse_loss", mse_loss()),
        ("attention", attention(false)),
        ("attention_causal", attention(true)),
    ]
}

/// d_model 8, one layer each side, L=8, F=2, three channels.
pub fn micro_model() -> f64 {
    let config = TransformerConfig {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        lookback: 8,
        label_len: 4,
        horizon: 2,
        input_channels: 3,
        dropout: 0.0,
        seed: 5,
        ..TransformerConfig::default()
    };
    let inputs = gaussian(&mut SeededRng::new(21), 30, 3);
    let target = inputs.col(2);
    let spec = WindowSpec {
        lookback: 8,
        label_len: 4,
        horizon: 2,
    };
    let set = WindowSet::new(Arc::new(inputs), Arc::new(target), 0..30, spec).unwrap();
    let model = ForecastModel::new(config).unwrap();
    check_model(&model, &set.batch(&[0, 7, 15]))
}
