//! Forecast metrics, Pearson correlation matrices and the consolidation of
//! accuracy and runtime tables into reduction percentages.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SeriesTable;
use crate::numeric::Matrix;
use crate::pca::{InfoKeptRecord, PcaModel};

/// Label used wherever the unreduced control run appears.
pub const CONTROL_LABEL: &str = "w/o PCA";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("prediction has {pred} values, truth has {truth}")]
    ShapeMismatch { pred: usize, truth: usize },
    #[error("no values to score")]
    Empty,
    #[error("{dataset}/{model}: no \"w/o PCA\" row")]
    MissingBaseline { dataset: String, model: String },
    #[error("{dataset}/{model}: no PCA rows")]
    NoPcaRows { dataset: String, model: String },
    #[error("{dataset}/{model}: no runtime for P={p}")]
    MissingRuntime {
        dataset: String,
        model: String,
        p: String,
    },
    #[error("nothing to average")]
    EmptyGroup,
    #[error("metrics table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), AnalysisError> {
    if pred.len() != truth.len() {
        return Err(AnalysisError::ShapeMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, AnalysisError> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, AnalysisError> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation of two equal-length series; `None` when either is
/// constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlations between every variable of a table, target last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PccMatrix {
    pub names: Vec<String>,
    pub matrix: Matrix,
    /// Constant columns; their off-diagonal entries are 0.
    pub constant: Vec<bool>,
}

impl PccMatrix {
    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(n);
            for j in 0..self.size() {
                let _ = write!(out, ",{}", self.matrix.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

pub fn pcc_matrix(table: &SeriesTable) -> PccMatrix {
    let (data, names) = table.all_variables();
    let cols: Vec<Vec<f64>> = (0..data.cols()).map(|c| data.col(c)).collect();
    let n = cols.len();
    let constant: Vec<bool> = cols.iter().map(|c| c.iter().all(|&v| v == c[0])).collect();
    let mut m = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&cols[i], &cols[j]).unwrap_or(0.0);
            m.set(i, j, r);
            m.set(j, i, r);
        }
    }
    PccMatrix {
        names,
        matrix: m,
        constant,
    }
}

/// One cell of an accuracy/runtime table. `p_components` is `None` for the
/// control run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub model: String,
    pub p_components: Option<usize>,
    pub mse: f64,
    pub mae: f64,
    pub runtime_s: f64,
}

pub fn p_label(p: Option<usize>) -> String {
    p.map_or_else(|| CONTROL_LABEL.to_string(), |p| p.to_string())
}

pub fn parse_p_label(s: &str) -> Option<Option<usize>> {
    let s = s.trim();
    if s == CONTROL_LABEL {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

/// Reads a metrics table with columns `dataset`, `model`, `p`, `mse`, `mae`
/// and `runtime_s` in any order; `p` is a count or `w/o PCA`. Extra columns
/// are ignored, rows whose optional `status` is not `ok` are skipped and
/// empty numeric cells parse as NaN.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>, AnalysisError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(["dataset", "model", "p", "mse", "mae", "runtime_s"]) {
        *slot = find(name).ok_or_else(|| AnalysisError::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })?;
    }
    let status = find("status");
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let err = |message: String| AnalysisError::Parse { line, message };
        if status.is_some_and(|s| row.get(s) != Some("ok")) {
            continue;
        }
        let field = |k: usize| row.get(cols[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64, AnalysisError> {
            let s = field(k);
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            s.parse().map_err(|_| err(format!("not a number: {s:?}")))
        };
        out.push(MetricsRecord {
            dataset: field(0).to_string(),
            model: field(1).to_string(),
            p_components: parse_p_label(field(2)).ok_or_else(|| err(format!("bad component count {:?}", field(2))))?,
            mse: num(3)?,
            mae: num(4)?,
            runtime_s: num(5)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub dataset: String,
    pub model: String,
    pub best_p: Option<usize>,
    pub best_mse: f64,
    pub baseline_mse: f64,
    pub best_runtime: f64,
    pub baseline_runtime: f64,
    pub mse_reduction_pct: f64,
    pub runtime_reduction_pct: f64,
}

fn reduction_pct(baseline: f64, best: f64) -> f64 {
    (baseline - best) / baseline * 100.0
}

pub(crate) fn first_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for s in items {
        if !seen.iter().any(|x| x == s) {
            seen.push(s.to_string());
        }
    }
    seen
}

/// Orders P ascending with the control last.
pub fn p_order(p: Option<usize>) -> (bool, usize) {
    (p.is_none(), p.unwrap_or(0))
}

/// Picks the lowest-MSE row of one (dataset, model) group and compares it
/// with the control. Ties go to the smaller P, the control losing ties.
pub fn reduce_group(
    dataset: &str,
    model: &str,
    rows: &[&MetricsRecord],
    runtimes: &HashMap<(String, String, Option<usize>), f64>,
) -> Result<ReductionRow, AnalysisError> {
    let baseline = rows
        .iter()
        .find(|r| r.p_components.is_none())
        .ok_or_else(|| AnalysisError::MissingBaseline {
            dataset: dataset.into(),
            model: model.into(),
        })?;
    if rows.iter().all(|r| r.p_components.is_none()) {
        return Err(AnalysisError::NoPcaRows {
            dataset: dataset.into(),
            model: model.into(),
        });
    }
    let mut sorted: Vec<&MetricsRecord> = rows.to_vec();
    sorted.sort_by_key(|r| p_order(r.p_components));
    let best = sorted
        .iter()
        .copied()
        .fold(None::<&MetricsRecord>, |acc, r| match acc {
            Some(a) if a.mse <= r.mse => Some(a),
            _ => Some(r),
        })
        .expect("group is nonempty");
    let runtime = |p: Option<usize>| {
        runtimes
            .get(&(dataset.to_string(), model.to_string(), p))
            .copied()
            .filter(|v| v.is_finite())
            .ok_or_else(|| AnalysisError::MissingRuntime {
                dataset: dataset.into(),
                model: model.into(),
                p: p_label(p),
            })
    };
    let best_runtime = runtime(best.p_components)?;
    let baseline_runtime = runtime(None)?;
    Ok(ReductionRow {
        dataset: dataset.into(),
        model: model.into(),
        best_p: best.p_components,
        best_mse: best.mse,
        baseline_mse: baseline.mse,
        best_runtime,
        baseline_runtime,
        mse_reduction_pct: reduction_pct(baseline.mse, best.mse),
        runtime_reduction_pct: reduction_pct(baseline_runtime, best_runtime),
    })
}

/// Runtime lookup keyed by `(dataset, model, P)`.
pub fn runtime_index(rt: &[MetricsRecord]) -> HashMap<(String, String, Option<usize>), f64> {
    rt.iter()
        .map(|r| ((r.dataset.clone(), r.model.clone(), r.p_components), r.runtime_s))
        .collect()
}

/// Groups of `(dataset, model)` in first-appearance order.
pub fn groups(acc: &[MetricsRecord]) -> Vec<(String, String, Vec<&MetricsRecord>)> {
    let datasets = first_appearance(acc.iter().map(|r| r.dataset.as_str()));
    let models = first_appearance(acc.iter().map(|r| r.model.as_str()));
    let mut out = Vec::new();
    for d in &datasets {
        for m in &models {
            let rows: Vec<&MetricsRecord> = acc.iter().filter(|r| &r.dataset == d && &r.model == m).collect();
            if !rows.is_empty() {
                out.push((d.clone(), m.clone(), rows));
            }
        }
    }
    out
}

/// Best-versus-control reduction for every (dataset, model) group of `acc`,
/// with runtimes looked up in `rt`.
pub fn reduction_table(acc: &[MetricsRecord], rt: &[MetricsRecord]) -> Result<Vec<ReductionRow>, AnalysisError> {
    let index = runtime_index(rt);
    groups(acc)
        .into_iter()
        .map(|(d, m, rows)| reduce_group(&d, &m, &rows, &index))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub model: String,
    pub mse_reduction_pct: f64,
    pub runtime_reduction_pct: f64,
    pub datasets: usize,
}

/// Mean reduction per model over its datasets.
pub fn average_reduction(rows: &[ReductionRow]) -> Result<Vec<AverageRow>, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    Ok(first_appearance(rows.iter().map(|r| r.model.as_str()))
        .into_iter()
        .map(|model| {
            let group: Vec<&ReductionRow> = rows.iter().filter(|r| r.model == model).collect();
            let n = group.len() as f64;
            AverageRow {
                mse_reduction_pct: group.iter().map(|r| r.mse_reduction_pct).sum::<f64>() / n,
                runtime_reduction_pct: group.iter().map(|r| r.runtime_reduction_pct).sum::<f64>() / n,
                datasets: group.len(),
                model,
            }
        })
        .collect())
}

/// Information kept for each requested P of each fitted dataset. Fits must
/// hold at least `max(P)` components.
pub fn info_kept_table(fits: &[(String, PcaModel)], ps: &[usize]) -> Vec<InfoKeptRecord> {
    let mut out = Vec::new();
    for (name, model) in fits {
        for &p in ps {
            if let Ok(kept) = model.information_kept(p) {
                out.push(InfoKeptRecord::new(name, model.n_features(), p, kept));
            }
        }
    }
    out
}

fn pct(v: f64) -> String {
    format!("{v:.2}%")
}

pub fn reductions_csv(rows: &[ReductionRow]) -> String {
    let mut out = String::from(
        "dataset,model,best_p,best_mse,baseline_mse,best_runtime_s,baseline_runtime_s,mse_reduction_pct,runtime_reduction_pct\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.2},{:.2}",
            r.dataset,
            r.model,
            p_label(r.best_p),
            r.best_mse,
            r.baseline_mse,
            r.best_runtime,
            r.baseline_runtime,
            r.mse_reduction_pct,
            r.runtime_reduction_pct
        );
    }
    out
}

pub fn info_kept_csv(rows: &[InfoKeptRecord]) -> String {
    let mut out = String::from("dataset,m_variables,p_components,information_kept_pct,dataset_ratio_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.1},{:.1}",
            r.dataset_name,
            r.m_variables,
            r.p_components,
            r.information_kept * 100.0,
            r.dataset_ratio * 100.0
        );
    }
    out
}

/// Markdown table of reductions: one row per dataset, an MSE and a runtime
/// column per model, and the per-model average at the bottom.
pub fn render_reductions_markdown(rows: &[ReductionRow], averages: &[AverageRow]) -> String {
    let models: Vec<String> = averages.iter().map(|a| a.model.clone()).collect();
    let datasets = first_appearance(rows.iter().map(|r| r.dataset.as_str()));
    let mut out = String::from("| Dataset |");
    for m in &models {
        let _ = write!(out, " {m} MSE | {m} Time |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|---:|".repeat(models.len()));
    out.push('\n');
    for d in &datasets {
        let _ = write!(out, "| {d} |");
        for m in &models {
            match rows.iter().find(|r| &r.dataset == d && &r.model == m) {
                Some(r) => {
                    let _ = write!(out, " {} | {} |", pct(r.mse_reduction_pct), pct(r.runtime_reduction_pct));
                }
                None => out.push_str(" GAP | GAP |"),
            }
        }
        out.push('\n');
    }
    out.push_str("| Average Reduction |");
    for a in averages {
        let _ = write!(out, " {} | {} |", pct(a.mse_reduction_pct), pct(a.runtime_reduction_pct));
    }
    out.push('\n');
    out
}
