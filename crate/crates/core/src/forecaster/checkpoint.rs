use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::ForecastModel;
use super::{ForecastError, TransformerConfig};
use crate::numeric::Matrix;

const FORMAT: &str = "f64-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset in values, not bytes.
    pub offset: usize,
}

/// JSON sidecar next to the flat parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: TransformerConfig,
    pub tensors: Vec<TensorEntry>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes parameters to `path` as little-endian f64 and the layout to
/// `path.json`.
pub fn save_checkpoint(model: &ForecastModel, path: &Path) -> Result<CheckpointMeta, ForecastError> {
    let mut bytes = Vec::with_capacity(model.parameter_count() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (p, name) in model.params().iter().zip(model.param_names()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            rows: p.rows(),
            cols: p.cols(),
            offset,
        });
        offset += p.len();
        for v in p.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        format: FORMAT.into(),
        config: model.config().clone(),
        tensors,
    };
    fs::write(path, bytes)?;
    fs::write(sidecar(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<ForecastModel, ForecastError> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    if meta.format != FORMAT {
        return Err(ForecastError::Checkpoint(format!("unknown format {}", meta.format)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(ForecastError::Checkpoint("truncated parameter file".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut model = ForecastModel::new(meta.config.clone())?;
    if model.param_names() != meta.tensors.iter().map(|t| t.name.clone()).collect::<Vec<_>>() {
        return Err(ForecastError::Checkpoint("tensor names do not match config".into()));
    }
    let mut params = Vec::with_capacity(meta.tensors.len());
    for t in &meta.tensors {
        let end = t.offset + t.rows * t.cols;
        let data = values
            .get(t.offset..end)
            .ok_or_else(|| ForecastError::Checkpoint(format!("tensor {} out of range", t.name)))?;
        params.push(Matrix::from_vec(t.rows, t.cols, data.to_vec())?);
    }
    model.set_params(params)?;
    Ok(model)
}
