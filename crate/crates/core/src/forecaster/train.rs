use std::time::Instant;

use super::model::{ForecastModel, ForwardMode};
use super::{ForecastError, TrainReport};
use crate::analysis::{mae, mse};
use crate::dataset::{PreparedData, WindowBatch, WindowSet};
use crate::numeric::{Graph, Matrix, SeededRng};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let p = p.as_mut_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for (i, &gi) in g.as_slice().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

fn target_column(batch: &WindowBatch) -> Matrix {
    let t = &batch.horizon_target;
    Matrix::from_raw(t.len(), 1, t.as_slice().to_vec())
}

fn step_graph(
    model: &ForecastModel,
    batch: &WindowBatch,
    mode: ForwardMode,
) -> Result<(f64, Vec<Matrix>, u64), ForecastError> {
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let pred = model.forward(&mut g, &ids, batch, mode)?;
    let loss = g.mse_loss(pred, target_column(batch))?;
    g.backward(loss)?;
    let value = g.value(loss).get(0, 0);
    let grads = ids.iter().map(|&id| g.grad(id)).collect();
    Ok((value, grads, g.flops()))
}

/// Mean-squared loss over the batch's horizon targets and its gradient for
/// every parameter, with dropout off.
pub fn batch_gradient(model: &ForecastModel, batch: &WindowBatch) -> Result<(f64, Vec<Matrix>), ForecastError> {
    let (loss, grads, _) = step_graph(model, batch, ForwardMode::Eval)?;
    Ok((loss, grads))
}

/// Horizon predictions, `size × F`.
pub fn predict(model: &ForecastModel, batch: &WindowBatch) -> Result<Matrix, ForecastError> {
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let pred = model.forward(&mut g, &ids, batch, ForwardMode::Eval)?;
    let f = model.config().horizon;
    Ok(Matrix::from_raw(batch.size, f, g.value(pred).as_slice().to_vec()))
}

/// Predictions for every window of `set`, evaluated `chunk` windows at a time.
pub fn predict_set(model: &ForecastModel, set: &WindowSet, chunk: usize) -> Result<(Matrix, Matrix), ForecastError> {
    let f = model.config().horizon;
    let mut pred = Vec::with_capacity(set.len() * f);
    let mut truth = Vec::with_capacity(set.len() * f);
    let idx: Vec<usize> = (0..set.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let batch = set.batch(part);
        pred.extend_from_slice(predict(model, &batch)?.as_slice());
        truth.extend_from_slice(batch.horizon_target.as_slice());
    }
    Ok((
        Matrix::from_raw(set.len(), f, pred),
        Matrix::from_raw(set.len(), f, truth),
    ))
}

fn evaluate(model: &ForecastModel, set: &WindowSet, chunk: usize) -> Result<(f64, f64), ForecastError> {
    let (pred, truth) = predict_set(model, set, chunk)?;
    Ok((mse(pred.as_slice(), truth.as_slice())?, mae(pred.as_slice(), truth.as_slice())?))
}

/// Fits `model` on the train windows with Adam on horizon MSE, stops early
/// on validation MSE, restores the best parameters and scores the test
/// windows. Runtime covers training and testing.
pub fn train(model: &mut ForecastModel, data: &PreparedData) -> Result<TrainReport, ForecastError> {
    let start = Instant::now();
    let config = model.config().clone();
    if data.train.is_empty() {
        return Err(ForecastError::NoTrainingData);
    }
    let mut order_rng = SeededRng::new(config.seed ^ 0x5eed_0001);
    let mut dropout_rng = SeededRng::new(config.seed ^ 0x5eed_0002);
    let mut adam = Adam::new(config.learning_rate, model.params());
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let mut epoch_train_loss = Vec::new();
    let mut epoch_val_mse = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().to_vec());
    let mut stale = 0;
    let mut flops_per_epoch = 0;

    for epoch in 0..config.epochs {
        if config.shuffle {
            order_rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        let mut flops = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = data.train.batch(chunk);
            let (loss, grads, f) = step_graph(model, &batch, ForwardMode::Train(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(ForecastError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    learning_rate: config.learning_rate,
                });
            }
            flops += f;
            adam.update(model.params_mut(), &grads);
            if model.params().iter().any(|p| p.as_slice().iter().any(|v| !v.is_finite())) {
                return Err(ForecastError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    learning_rate: config.learning_rate,
                });
            }
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        if epoch == 0 {
            flops_per_epoch = flops;
        }
        let train_loss = total / count as f64;
        epoch_train_loss.push(train_loss);
        let val = if data.val.is_empty() {
            train_loss
        } else {
            evaluate(model, &data.val, config.batch_size)?.0
        };
        epoch_val_mse.push(val);
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val:.6}");
        if val < best.0 {
            best = (val, epoch, model.params().to_vec());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience.max(1) {
                break;
            }
        }
    }

    let (_, best_epoch, params) = best;
    model.set_params(params)?;
    let (val_mse, val_mae) = if data.val.is_empty() {
        (epoch_val_mse[best_epoch], f64::NAN)
    } else {
        evaluate(model, &data.val, config.batch_size)?
    };
    let (test_mse, test_mae) = evaluate(model, &data.test, config.batch_size)?;
    let runtime_seconds = start.elapsed().as_secs_f64();
    Ok(TrainReport {
        model: "Transformer".into(),
        epoch_train_loss,
        epoch_val_mse,
        best_epoch,
        val_mse,
        val_mae,
        test_mse,
        test_mae,
        runtime_seconds,
        flops_per_epoch,
        seed: config.seed,
        config: Some(config),
    })
}
