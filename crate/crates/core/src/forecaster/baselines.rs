use std::time::Instant;

use super::{Backbone, ForecastError, TrainReport};
use crate::analysis::{mae, mse};
use crate::dataset::{PreparedData, WindowSet};
use crate::numeric::linalg::cholesky_solve;
use crate::numeric::Matrix;

fn report(name: &str, val: (f64, f64), test: (f64, f64), start: Instant) -> TrainReport {
    TrainReport {
        model: name.into(),
        epoch_train_loss: Vec::new(),
        epoch_val_mse: Vec::new(),
        best_epoch: 0,
        val_mse: val.0,
        val_mae: val.1,
        test_mse: test.0,
        test_mae: test.1,
        runtime_seconds: start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        flops_per_epoch: 0,
        seed: 0,
        config: None,
    }
}

fn score(set: &WindowSet, forecast: impl Fn(&[f64]) -> Vec<f64>) -> Result<(f64, f64), ForecastError> {
    if set.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let batch = set.all();
    let mut pred = Vec::with_capacity(batch.horizon_target.len());
    for i in 0..batch.size {
        pred.extend(forecast(batch.target_history.row(i)));
    }
    let truth = batch.horizon_target.as_slice();
    Ok((mse(&pred, truth)?, mae(&pred, truth)?))
}

/// Repeats the last observed target value across the horizon.
pub fn baseline_last_value(data: &PreparedData) -> Result<TrainReport, ForecastError> {
    let start = Instant::now();
    let f = data.test.spec().horizon;
    let fc = |h: &[f64]| vec![h[h.len() - 1]; f];
    let val = score(&data.val, fc)?;
    let test = score(&data.test, fc)?;
    Ok(report("LastValue", val, test, start))
}

/// Ridge regression from the lookback target history to the horizon, fitted
/// on the train windows. `ridge` is relative to the mean feature energy.
pub fn baseline_linear(data: &PreparedData, ridge: f64) -> Result<TrainReport, ForecastError> {
    let start = Instant::now();
    if data.train.is_empty() {
        return Err(ForecastError::NoTrainingData);
    }
    let fit = LinearFit::fit(&data.train, ridge)?;
    let val = score(&data.val, |h| fit.forecast(h))?;
    let test = score(&data.test, |h| fit.forecast(h))?;
    Ok(report("Linear", val, test, start))
}

struct LinearFit {
    x_mean: Vec<f64>,
    y_mean: Vec<f64>,
    weights: Matrix,
}

impl LinearFit {
    fn fit(set: &WindowSet, ridge: f64) -> Result<Self, ForecastError> {
        let batch = set.all();
        let x = &batch.target_history;
        let y = &batch.horizon_target;
        let x_mean = x.column_means();
        let y_mean = y.column_means();
        let (n, l) = x.shape();
        let f = y.cols();
        let mut xc = x.clone();
        let mut yc = y.clone();
        for r in 0..n {
            for (v, m) in xc.row_mut(r).iter_mut().zip(&x_mean) {
                *v -= m;
            }
            for (v, m) in yc.row_mut(r).iter_mut().zip(&y_mean) {
                *v -= m;
            }
        }
        let xt = xc.transpose();
        let mut gram = xt.matmul(&xc)?;
        let energy = (0..l).map(|i| gram.get(i, i)).sum::<f64>() / l as f64;
        let lambda = ridge * energy.max(1e-12);
        for i in 0..l {
            gram.set(i, i, gram.get(i, i) + lambda);
        }
        let rhs = xt.matmul(&yc)?;
        let weights = cholesky_solve(&gram, &rhs)?;
        debug_assert_eq!(weights.shape(), (l, f));
        Ok(Self {
            x_mean,
            y_mean,
            weights,
        })
    }

    fn forecast(&self, history: &[f64]) -> Vec<f64> {
        let mut out = self.y_mean.clone();
        for (i, (&h, m)) in history.iter().zip(&self.x_mean).enumerate() {
            let d = h - m;
            for (o, w) in out.iter_mut().zip(self.weights.row(i)) {
                *o += d * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct LastValueBaseline;

impl Backbone for LastValueBaseline {
    fn name(&self) -> &str {
        "LastValue"
    }

    fn run(&mut self, data: &PreparedData) -> Result<TrainReport, ForecastError> {
        baseline_last_value(data)
    }
}

#[derive(Debug, Clone)]
pub struct LinearBaseline {
    pub ridge: f64,
}

impl Default for LinearBaseline {
    fn default() -> Self {
        Self { ridge: 1e-6 }
    }
}

impl Backbone for LinearBaseline {
    fn name(&self) -> &str {
        "Linear"
    }

    fn run(&mut self, data: &PreparedData) -> Result<TrainReport, ForecastError> {
        baseline_linear(data, self.ridge)
    }
}
