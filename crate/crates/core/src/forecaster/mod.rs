//! Vanilla encoder-decoder transformer forecaster, trivial baselines and the
//! training loop that produces per-run accuracy and runtime.

mod attention;
mod baselines;
mod checkpoint;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::dataset::{PreparedData, WindowSpec};
use crate::numeric::NumericError;

pub use attention::{attention, multi_head_attention};
pub use baselines::{baseline_last_value, baseline_linear, LastValueBaseline, LinearBaseline};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, TensorEntry};
pub use model::{positional_encoding, ForecastModel, ForwardMode};
pub use train::{batch_gradient, predict, predict_set, train, Adam};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("batch does not match model: {0}")]
    BatchMismatch(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (learning rate {learning_rate}); try a smaller learning rate")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },
    #[error("no training windows")]
    NoTrainingData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Metrics(#[from] AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub lookback: usize,
    pub label_len: usize,
    pub horizon: usize,
    pub input_channels: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            dropout: 0.1,
            lookback: 96,
            label_len: 48,
            horizon: 96,
            input_channels: 1,
            learning_rate: 1e-4,
            epochs: 10,
            patience: 3,
            batch_size: 16,
            shuffle: true,
            seed: 2024,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let counts = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("input_channels", self.input_channels),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ForecastError::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ForecastError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.label_len > self.lookback {
            return Err(ForecastError::Config("label_len exceeds lookback".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ForecastError::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ForecastError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            lookback: self.lookback,
            label_len: self.label_len,
            horizon: self.horizon,
        }
    }

    /// Copy of `self` with window sizes and channel count taken from `data`.
    pub fn for_data(&self, data: &PreparedData) -> Self {
        let spec = data.train.spec();
        Self {
            lookback: spec.lookback,
            label_len: spec.label_len,
            horizon: spec.horizon,
            input_channels: data.input_channels,
            ..self.clone()
        }
    }
}

/// Outcome of one fitted-and-evaluated backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub val_mse: f64,
    pub val_mae: f64,
    pub test_mse: f64,
    pub test_mae: f64,
    /// Wall-clock seconds around training and testing.
    pub runtime_seconds: f64,
    /// Floating-point operations counted over the first training epoch.
    pub flops_per_epoch: u64,
    pub seed: u64,
    pub config: Option<TransformerConfig>,
}

/// A forecasting model that can be fitted and scored on prepared data.
pub trait Backbone {
    fn name(&self) -> &str;
    fn run(&mut self, data: &PreparedData) -> Result<TrainReport, ForecastError>;
}

/// Transformer backbone; the model is rebuilt for each run's channel count.
#[derive(Debug, Clone)]
pub struct TransformerBackbone {
    pub config: TransformerConfig,
    pub last_model: Option<ForecastModel>,
}

impl TransformerBackbone {
    pub fn new(config: TransformerConfig) -> Self {
        Self {
            config,
            last_model: None,
        }
    }
}

impl Backbone for TransformerBackbone {
    fn name(&self) -> &str {
        "Transformer"
    }

    fn run(&mut self, data: &PreparedData) -> Result<TrainReport, ForecastError> {
        let config = self.config.for_data(data);
        let mut model = ForecastModel::new(config)?;
        let report = train(&mut model, data)?;
        self.last_model = Some(model);
        Ok(report)
    }
}
