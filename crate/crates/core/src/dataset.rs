//! Series ingestion and the preprocessing pipeline: PCA on the non-target
//! channels, chronological split, train-statistics standardization and
//! supervised windows.

use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{Matrix, NumericError, SeededRng};
use crate::pca::{self, PcaError, PcaMethod, PcaModel};

/// Standard deviations are floored here so constant channels map to zero.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file: no data rows")]
    Empty,
    #[error("target column `{target}` not found; available columns: {}", available.join(", "))]
    MissingTarget {
        target: String,
        available: Vec<String>,
    },
    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid split {0}")]
    InvalidSplit(String),
    #[error("range {range:?} has {len} steps; windows need at least {required} (lookback + horizon)")]
    RangeTooShort {
        range: Range<usize>,
        len: usize,
        required: usize,
    },
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// A multivariate series `H = (x¹ … xᴹ, y)` with the target held apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    timestamps: Option<Vec<String>>,
    channels: Matrix,
    target: Vec<f64>,
    channel_names: Vec<String>,
    target_name: String,
}

impl SeriesTable {
    pub fn new(
        timestamps: Option<Vec<String>>,
        channels: Matrix,
        target: Vec<f64>,
        channel_names: Vec<String>,
        target_name: String,
    ) -> Result<Self, DatasetError> {
        if channel_names.contains(&target_name) {
            return Err(DatasetError::InvalidTable(format!(
                "target `{target_name}` is also listed as a channel"
            )));
        }
        if channels.cols() != channel_names.len() {
            return Err(DatasetError::InvalidTable(format!(
                "{} channel columns but {} names",
                channels.cols(),
                channel_names.len()
            )));
        }
        if channels.rows() != target.len() {
            return Err(DatasetError::InvalidTable(format!(
                "{} channel rows but {} target values",
                channels.rows(),
                target.len()
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != target.len() {
                return Err(DatasetError::InvalidTable("timestamp count mismatch".into()));
            }
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidTable("non-finite target value".into()));
        }
        Ok(Self {
            timestamps,
            channels,
            target,
            channel_names,
            target_name,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.cols()
    }

    pub fn channels(&self) -> &Matrix {
        &self.channels
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// Copy with the target replaced; used by leakage probes.
    pub fn with_target(&self, target: Vec<f64>) -> Result<Self, DatasetError> {
        Self::new(
            self.timestamps.clone(),
            self.channels.clone(),
            target,
            self.channel_names.clone(),
            self.target_name.clone(),
        )
    }

    /// Channels followed by the target as the final column.
    pub fn all_variables(&self) -> (Matrix, Vec<String>) {
        let t = self.len();
        let m = self.n_channels();
        let mut data = Vec::with_capacity(t * (m + 1));
        for r in 0..t {
            data.extend_from_slice(self.channels.row(r));
            data.push(self.target[r]);
        }
        let mut names = self.channel_names.clone();
        names.push(self.target_name.clone());
        (Matrix::from_raw(t, m + 1, data), names)
    }

    /// Model input matrix: channels, plus the target as the last column when
    /// `append_target`.
    pub fn model_inputs(&self, append_target: bool) -> Matrix {
        if append_target {
            self.all_variables().0
        } else {
            self.channels.clone()
        }
    }
}

/// Reads a CSV with a header row. A first column named `date` is kept as
/// timestamps; every other column must be numeric.
pub fn load_csv(path: &Path, target_name: &str) -> Result<SeriesTable, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(file, target_name)
}

pub fn parse_csv<R: Read>(reader: R, target_name: &str) -> Result<SeriesTable, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let has_date = headers.first().is_some_and(|h| h.eq_ignore_ascii_case("date"));
    let value_cols: Vec<usize> = (usize::from(has_date)..headers.len()).collect();
    let Some(target_col) = value_cols.iter().copied().find(|&c| headers[c] == target_name) else {
        return Err(DatasetError::MissingTarget {
            target: target_name.to_string(),
            available: headers,
        });
    };
    let channel_cols: Vec<usize> = value_cols.iter().copied().filter(|&c| c != target_col).collect();

    let mut timestamps = Vec::new();
    let mut channel_data = Vec::new();
    let mut target = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = i + 2;
        let parse = |c: usize| -> Result<f64, DatasetError> {
            let raw = record.get(c).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::NonNumeric {
                    row,
                    column: headers[c].clone(),
                    value: raw.to_string(),
                })
        };
        if has_date {
            timestamps.push(record.get(0).unwrap_or("").to_string());
        }
        for &c in &channel_cols {
            channel_data.push(parse(c)?);
        }
        target.push(parse(target_col)?);
    }
    if target.is_empty() {
        return Err(DatasetError::Empty);
    }
    let channels = Matrix::from_vec(target.len(), channel_cols.len(), channel_data)?;
    SeriesTable::new(
        has_date.then_some(timestamps),
        channels,
        target,
        channel_cols.iter().map(|&c| headers[c].clone()).collect(),
        target_name.to_string(),
    )
}

/// Train/validation/test fractions, applied chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous ordered ranges; both boundaries are floored and the remainder
/// goes to test.
pub fn chronological_split(len: usize, spec: &SplitSpec) -> Result<SplitRanges, DatasetError> {
    let fracs = [spec.train_frac, spec.val_frac, spec.test_frac];
    if fracs.iter().any(|f| !(0.0..=1.0).contains(f) || !f.is_finite()) {
        return Err(DatasetError::InvalidSplit(format!("fractions {fracs:?} outside [0, 1]")));
    }
    if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidSplit(format!("fractions {fracs:?} do not sum to 1")));
    }
    let n = len as f64;
    let train_end = (n * spec.train_frac + 1e-9).floor() as usize;
    let val_end = (train_end + (n * spec.val_frac + 1e-9).floor() as usize).min(len);
    let ranges = SplitRanges {
        train: 0..train_end,
        val: train_end..val_end,
        test: val_end..len,
    };
    for (name, r) in [("train", &ranges.train), ("val", &ranges.val), ("test", &ranges.test)] {
        if r.is_empty() {
            return Err(DatasetError::InvalidSplit(format!(
                "{name} split is empty for {len} steps"
            )));
        }
    }
    Ok(ranges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    /// Population mean and std over `values`, std floored at [`STD_FLOOR`].
    pub fn fit(values: impl ExactSizeIterator<Item = f64> + Clone) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-column statistics fitted on one row range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<ColumnStats>,
}

impl Standardizer {
    pub fn fit(data: &Matrix, rows: Range<usize>) -> Self {
        let columns = (0..data.cols())
            .map(|c| ColumnStats::fit(rows.clone().map(|r| data.get(r, c))))
            .collect();
        Self { columns }
    }

    pub fn apply(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for r in 0..out.rows() {
            for (v, s) in out.row_mut(r).iter_mut().zip(&self.columns) {
                *v = s.apply(*v);
            }
        }
        out
    }
}

/// Lookback, decoder label length and horizon of each supervised window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub label_len: usize,
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            lookback: 96,
            label_len: 48,
            horizon: 96,
        }
    }
}

impl WindowSpec {
    pub fn decoder_len(&self) -> usize {
        self.label_len + self.horizon
    }
}

/// Window start offsets for `range`: one per position where lookback and
/// horizon both fit inside the range.
pub fn make_windows(range: Range<usize>, spec: &WindowSpec) -> Result<Vec<usize>, DatasetError> {
    let required = spec.lookback + spec.horizon;
    let len = range.len();
    if len < required || spec.lookback == 0 || spec.horizon == 0 {
        return Err(DatasetError::RangeTooShort {
            range,
            len,
            required,
        });
    }
    if spec.label_len > spec.lookback {
        return Err(DatasetError::InvalidSplit(format!(
            "label_len {} exceeds lookback {}",
            spec.label_len, spec.lookback
        )));
    }
    Ok((range.start..=range.end - required).collect())
}

/// Windows cut from one split of a standardized series. Values are shared;
/// batches are materialized on demand.
#[derive(Debug, Clone)]
pub struct WindowSet {
    inputs: Arc<Matrix>,
    target: Arc<Vec<f64>>,
    starts: Vec<usize>,
    spec: WindowSpec,
    range: Range<usize>,
}

/// A materialized group of windows, stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub size: usize,
    /// `size·L × C`.
    pub encoder_input: Matrix,
    /// `size·(label_len + F) × C`; the last label_len encoder steps followed
    /// by zero placeholders for the horizon.
    pub decoder_input: Matrix,
    /// `size × F` future target values.
    pub horizon_target: Matrix,
    /// `size × L` past target values aligned with the encoder input.
    pub target_history: Matrix,
    pub starts: Vec<usize>,
}

impl WindowSet {
    pub fn new(
        inputs: Arc<Matrix>,
        target: Arc<Vec<f64>>,
        range: Range<usize>,
        spec: WindowSpec,
    ) -> Result<Self, DatasetError> {
        if inputs.rows() != target.len() || range.end > target.len() {
            return Err(DatasetError::InvalidTable("window source length mismatch".into()));
        }
        let starts = make_windows(range.clone(), &spec)?;
        Ok(Self {
            inputs,
            target,
            starts,
            spec,
            range,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn channels(&self) -> usize {
        self.inputs.cols()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Series rows feeding the encoder of window `i`.
    pub fn encoder_rows(&self, i: usize) -> Range<usize> {
        let s = self.starts[i];
        s..s + self.spec.lookback
    }

    /// Series rows whose target values window `i` forecasts.
    pub fn horizon_rows(&self, i: usize) -> Range<usize> {
        let s = self.starts[i] + self.spec.lookback;
        s..s + self.spec.horizon
    }

    pub fn batch(&self, indices: &[usize]) -> WindowBatch {
        let WindowSpec {
            lookback,
            label_len,
            horizon,
        } = self.spec;
        let c = self.inputs.cols();
        let dec_len = label_len + horizon;
        let mut enc = Vec::with_capacity(indices.len() * lookback * c);
        let mut dec = Vec::with_capacity(indices.len() * dec_len * c);
        let mut fut = Vec::with_capacity(indices.len() * horizon);
        let mut hist = Vec::with_capacity(indices.len() * lookback);
        let mut starts = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.starts[i];
            starts.push(s);
            for r in s..s + lookback {
                enc.extend_from_slice(self.inputs.row(r));
                hist.push(self.target[r]);
            }
            for r in s + lookback - label_len..s + lookback {
                dec.extend_from_slice(self.inputs.row(r));
            }
            dec.extend(std::iter::repeat_n(0.0, horizon * c));
            fut.extend_from_slice(&self.target[s + lookback..s + lookback + horizon]);
        }
        let b = indices.len();
        WindowBatch {
            size: b,
            encoder_input: Matrix::from_raw(b * lookback, c, enc),
            decoder_input: Matrix::from_raw(b * dec_len, c, dec),
            horizon_target: Matrix::from_raw(b, horizon, fut),
            target_history: Matrix::from_raw(b, lookback, hist),
            starts,
        }
    }

    pub fn all(&self) -> WindowBatch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Replaces the channels of `table` with the scores of `model`; the target
/// is carried over untouched.
pub fn reduce_with_pca(table: &SeriesTable, model: &PcaModel) -> Result<SeriesTable, DatasetError> {
    if model.n_features() != table.n_channels() {
        return Err(DatasetError::ChannelMismatch(format!(
            "model fitted on {} channels, table has {}",
            model.n_features(),
            table.n_channels()
        )));
    }
    if !model.channel_names.is_empty() && model.channel_names != table.channel_names {
        return Err(DatasetError::ChannelMismatch(
            "model channel names differ from table channel names".into(),
        ));
    }
    let scores = model.transform(table.channels())?;
    let names = (1..=model.n_components()).map(|p| format!("pc{p}")).collect();
    SeriesTable::new(
        table.timestamps.clone(),
        scores,
        table.target.clone(),
        names,
        table.target_name.clone(),
    )
}

/// Rows PCA is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaFitScope {
    /// The whole non-target series, before splitting.
    #[default]
    Full,
    /// Only the train range.
    #[serde(alias = "train")]
    TrainOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub split: SplitSpec,
    pub windows: WindowSpec,
    pub append_target: bool,
    pub pca_fit: PcaFitScope,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            windows: WindowSpec::default(),
            append_target: true,
            pca_fit: PcaFitScope::Full,
        }
    }
}

/// Requested channel reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduction {
    pub components: usize,
    pub method: PcaMethod,
    pub seed: u64,
}

/// Everything a backbone needs for one run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub ranges: SplitRanges,
    pub input_stats: Standardizer,
    pub target_stats: ColumnStats,
    pub input_channels: usize,
    pub pca: Option<PcaModel>,
    pub pca_fit_seconds: f64,
}

/// Fits PCA on the requested rows, splits, standardizes and windows.
pub fn fit_reduction(
    table: &SeriesTable,
    reduction: &Reduction,
    rows: Range<usize>,
) -> Result<PcaModel, DatasetError> {
    let fit_rows = if rows == (0..table.len()) {
        table.channels().clone()
    } else {
        table.channels().slice_rows(rows.start, rows.len())
    };
    let mut rng = SeededRng::new(reduction.seed);
    Ok(
        pca::fit(&fit_rows, reduction.components, reduction.method, &mut rng)?
            .with_channel_names(table.channel_names().to_vec()),
    )
}

pub fn prepare(
    table: &SeriesTable,
    reduction: Option<&Reduction>,
    config: &PipelineConfig,
) -> Result<PreparedData, DatasetError> {
    let ranges = chronological_split(table.len(), &config.split)?;
    let (reduced, pca, pca_fit_seconds) = match reduction {
        Some(r) => {
            let rows = match config.pca_fit {
                PcaFitScope::Full => 0..table.len(),
                PcaFitScope::TrainOnly => ranges.train.clone(),
            };
            let start = Instant::now();
            let model = fit_reduction(table, r, rows)?;
            let secs = start.elapsed().as_secs_f64();
            (reduce_with_pca(table, &model)?, Some(model), secs)
        }
        None => (table.clone(), None, 0.0),
    };

    let raw_inputs = reduced.model_inputs(config.append_target);
    let input_stats = Standardizer::fit(&raw_inputs, ranges.train.clone());
    let target_stats = ColumnStats::fit(ranges.train.clone().map(|r| reduced.target()[r]));
    let inputs = Arc::new(input_stats.apply(&raw_inputs));
    let target = Arc::new(reduced.target().iter().map(|&v| target_stats.apply(v)).collect::<Vec<_>>());

    let make = |r: &Range<usize>| WindowSet::new(inputs.clone(), target.clone(), r.clone(), config.windows);
    Ok(PreparedData {
        train: make(&ranges.train)?,
        val: make(&ranges.val)?,
        test: make(&ranges.test)?,
        input_channels: raw_inputs.cols(),
        ranges,
        input_stats,
        target_stats,
        pca,
        pca_fit_seconds,
    })
}
