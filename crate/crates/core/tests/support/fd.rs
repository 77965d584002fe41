//! Central finite differences against reverse-mode gradients.

use pcaformer::dataset::WindowBatch;
use pcaformer::forecaster::{batch_gradient, ForecastModel};
use pcaformer::numeric::{Graph, NodeId};
use pcaformer::Matrix;

pub const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn with_entry(m: &Matrix, i: usize, v: f64) -> Matrix {
    let mut data = m.as_slice().to_vec();
    data[i] = v;
    Matrix::from_vec(m.rows(), m.cols(), data).expect("finite perturbation")
}

/// Max relative error over every entry of every input. `build` receives the
/// graph and one parameter node per input and returns a scalar loss.
pub fn check_op<F>(inputs: &[Matrix], build: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |xs: &[Matrix]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.param(x.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).get(0, 0)
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss).expect("scalar loss");
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let grad = g.grad(ids[k]);
        for i in 0..x.len() {
            let v = x.as_slice()[i];
            let mut plus = inputs.to_vec();
            plus[k] = with_entry(x, i, v + STEP);
            let mut minus = inputs.to_vec();
            minus[k] = with_entry(x, i, v - STEP);
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(grad.as_slice()[i], numeric));
        }
    }
    worst
}

/// Max relative error over every model parameter for the horizon MSE loss.
pub fn check_model(model: &ForecastModel, batch: &WindowBatch) -> f64 {
    let (_, grads) = batch_gradient(model, batch).expect("gradient");
    let base = model.params().to_vec();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, p) in base.iter().enumerate() {
        for i in 0..p.len() {
            let v = p.as_slice()[i];
            let mut loss_at = |x: f64| {
                let mut params = base.clone();
                params[k] = with_entry(p, i, x);
                probe.set_params(params).expect("same shapes");
                batch_gradient(&probe, batch).expect("loss").0
            };
            let numeric = (loss_at(v + STEP) - loss_at(v - STEP)) / (2.0 * STEP);
            worst = worst.max(relative_error(grads[k].as_slice()[i], numeric));
        }
    }
    worst
}
