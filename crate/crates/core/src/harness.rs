//! Experiment sweeps over component counts, their on-disk artifacts and the
//! consolidated reports built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    self, average_reduction, groups, p_label, p_order, parse_metrics_csv, pcc_matrix, reduce_group,
    render_reductions_markdown, runtime_index, AnalysisError, MetricsRecord, PccMatrix, ReductionRow,
};
use crate::dataset::{
    self, load_csv, prepare, DatasetError, PcaFitScope, PipelineConfig, Reduction, SeriesTable, SplitSpec,
};
use crate::forecaster::{
    save_checkpoint, Backbone, ForecastError, LastValueBaseline, LinearBaseline, TrainReport, TransformerBackbone,
    TransformerConfig,
};
use crate::numeric::{Matrix, SeededRng};
use crate::pca::{InfoKeptRecord, PcaError, PcaMethod};

/// Accuracy and runtime cells transcribed from the published tables.
pub const PAPER_TABLES: &str = include_str!("../../../fixtures/paper_tables.csv");
/// Published reduction percentages, including the per-model averages.
pub const PAPER_REDUCTIONS: &str = include_str!("../../../fixtures/paper_reductions.csv");
/// Slack for comparing recomputed percentages with two-decimal published ones.
pub const FIXTURE_TOLERANCE_PP: f64 = 0.02;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{failed} of {total} runs failed")]
    RunsFailed { failed: usize, total: usize },
    #[error("report has {0} gap(s)")]
    Gaps(usize),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Json(_) => 2,
            HarnessError::Dataset(DatasetError::MissingTarget { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Latent-factor series: `channels` noisy mixtures of `latent` smooth
/// factors, and a target driven by the same factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub timesteps: usize,
    pub channels: usize,
    pub latent: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            timesteps: 5000,
            channels: 10,
            latent: 2,
            noise: 0.05,
            seed: 7,
        }
    }
}

pub fn synthetic_table(spec: &SyntheticSpec) -> Result<SeriesTable, HarnessError> {
    if spec.timesteps < 2 || spec.channels == 0 || spec.latent == 0 {
        return Err(HarnessError::Config("synthetic series needs timesteps ≥ 2, channels and latent ≥ 1".into()));
    }
    let mut rng = SeededRng::new(spec.seed);
    let t = spec.timesteps;
    let mut factors = Matrix::zeros(t, spec.latent);
    for k in 0..spec.latent {
        let period = 24.0 * (k + 1) as f64 + 7.0 * k as f64;
        let slow = 168.0 * (k + 1) as f64;
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let mut ar = 0.0;
        for i in 0..t {
            ar = 0.95 * ar + 0.1 * rng.normal();
            let x = i as f64;
            let v = (std::f64::consts::TAU * x / period + phase).sin()
                + 0.5 * (std::f64::consts::TAU * x / slow).cos()
                + ar;
            factors.set(i, k, v);
        }
    }
    let loadings = crate::numeric::gaussian(&mut rng, spec.latent, spec.channels);
    let weights: Vec<f64> = (0..spec.latent).map(|_| rng.uniform(0.5, 1.0)).collect();
    let mut channels = factors.matmul(&loadings).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut target = Vec::with_capacity(t);
    for i in 0..t {
        for v in channels.row_mut(i) {
            *v += spec.noise * rng.normal();
        }
        let y: f64 = factors.row(i).iter().zip(&weights).map(|(f, w)| f * w).sum();
        target.push(y + spec.noise * rng.normal());
    }
    let names = (1..=spec.channels).map(|m| format!("x{m}")).collect();
    Ok(SeriesTable::new(None, channels, target, names, "y".into())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv { path: PathBuf, target: String },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    #[default]
    Transformer,
    LastValue,
    Linear,
}

/// One sweep: a dataset, the component counts to try and how to fit each
/// run. The unreduced control is always added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub dataset: DatasetSource,
    pub components: Vec<usize>,
    pub backbone: BackboneKind,
    /// Window sizes are taken from here as well.
    pub transformer: TransformerConfig,
    pub split: SplitSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub pca_fit: PcaFitScope,
    pub pca_method: PcaMethod,
    pub append_target: bool,
    pub save_checkpoints: bool,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            components: vec![2],
            backbone: BackboneKind::Transformer,
            transformer: TransformerConfig::default(),
            split: SplitSpec::default(),
            seed: 2024,
            out_dir: PathBuf::from("runs"),
            pca_fit: PcaFitScope::Full,
            pca_method: PcaMethod::randomized(),
            append_target: true,
            save_checkpoints: true,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.dataset {
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned()),
            DatasetSource::Synthetic(_) => "synthetic".into(),
        }
    }

    pub fn load(&self) -> Result<SeriesTable, HarnessError> {
        match &self.dataset {
            DatasetSource::Csv { path, target } => Ok(load_csv(path, target)?),
            DatasetSource::Synthetic(spec) => synthetic_table(spec),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            split: self.split,
            windows: self.transformer.window_spec(),
            append_target: self.append_target,
            pca_fit: self.pca_fit,
        }
    }

    /// Component counts ascending, deduplicated, then the control.
    pub fn cells(&self) -> Vec<Option<usize>> {
        let mut ps = self.components.clone();
        ps.sort_unstable();
        ps.dedup();
        ps.into_iter().map(Some).chain([None]).collect()
    }

    pub fn validate(&self, m: usize) -> Result<(), HarnessError> {
        if let Some(p) = self.components.iter().find(|&&p| p == 0 || p > m) {
            return Err(HarnessError::Config(format!("component count {p} outside [1, {m}]")));
        }
        if self.backbone == BackboneKind::Transformer {
            self.transformer.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn model_name(&self) -> &'static str {
        match self.backbone {
            BackboneKind::Transformer => "Transformer",
            BackboneKind::LastValue => "LastValue",
            BackboneKind::Linear => "Linear",
        }
    }
}

/// Seed of the `index`-th cell of a sweep.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

fn cell_dir_name(dataset: &str, p: Option<usize>) -> String {
    match p {
        Some(p) => format!("{dataset}_p{p}"),
        None => format!("{dataset}_control"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: String,
    pub p_components: Option<usize>,
    pub seed: u64,
    pub input_channels: usize,
    pub pca_fit_seconds: f64,
    pub information_kept: Option<f64>,
    pub report: Option<TrainReport>,
    pub error: Option<String>,
    pub dir: String,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.report.is_some()
    }

    pub fn metrics(&self) -> Option<MetricsRecord> {
        self.report.as_ref().map(|r| MetricsRecord {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            p_components: self.p_components,
            mse: r.test_mse,
            mae: r.test_mae,
            runtime_s: r.runtime_seconds,
        })
    }
}

/// Columns of `metrics.csv`; `runtime_s` and `pca_fit_s` are wall-clock.
pub const METRICS_HEADER: &str =
    "dataset,model,p,mse,mae,runtime_s,pca_fit_s,input_channels,val_mse,best_epoch,epochs_run,flops_per_epoch,seed,status";
pub const RUNTIME_COLUMNS: [&str; 2] = ["runtime_s", "pca_fit_s"];

pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        let _ = write!(out, "{},{},{},", r.dataset, r.model, p_label(r.p_components));
        match &r.report {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},ok",
                    t.test_mse,
                    t.test_mae,
                    t.runtime_seconds,
                    r.pca_fit_seconds,
                    r.input_channels,
                    t.val_mse,
                    t.best_epoch,
                    t.epoch_train_loss.len(),
                    t.flops_per_epoch,
                    r.seed
                );
            }
            None => {
                let _ = writeln!(out, ",,,,{},,,,,{},failed", r.input_channels, r.seed);
            }
        }
    }
    out
}

/// Everything a finished sweep produced.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dataset: String,
    pub records: Vec<RunRecord>,
    pub reductions: Vec<ReductionRow>,
    pub info_kept: Vec<InfoKeptRecord>,
    pub pcc: PccMatrix,
    pub out_dir: PathBuf,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.ok()).count()
    }
}

fn run_cell(
    config: &ExperimentConfig,
    table: &SeriesTable,
    dataset: &str,
    index: usize,
    p: Option<usize>,
) -> RunRecord {
    let seed = cell_seed(config.seed, index);
    let dir = cell_dir_name(dataset, p);
    let mut record = RunRecord {
        dataset: dataset.into(),
        model: config.model_name().into(),
        p_components: p,
        seed,
        input_channels: 0,
        pca_fit_seconds: 0.0,
        information_kept: None,
        report: None,
        error: None,
        dir: dir.clone(),
    };
    let run_dir = config.out_dir.join("runs").join(&dir);
    let result = (|| -> Result<TrainReport, HarnessError> {
        fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
        let reduction = p.map(|components| Reduction {
            components,
            method: config.pca_method,
            seed,
        });
        let data = prepare(table, reduction.as_ref(), &config.pipeline())?;
        record.input_channels = data.input_channels;
        record.pca_fit_seconds = data.pca_fit_seconds;
        let preprocess = serde_json::json!({
            "ranges": data.ranges,
            "input_stats": data.input_stats,
            "target_stats": data.target_stats,
            "windows": { "train": data.train.len(), "val": data.val.len(), "test": data.test.len() },
        });
        write(&run_dir.join("preprocess.json"), serde_json::to_string_pretty(&preprocess)?)?;
        if let Some(model) = &data.pca {
            record.information_kept = Some(model.information_kept(model.n_components())?);
            model.save(&run_dir.join("pca.json"))?;
        }
        let report = match config.backbone {
            BackboneKind::Transformer => {
                let mut b = TransformerBackbone::new(TransformerConfig {
                    seed,
                    ..config.transformer.clone()
                });
                let report = b.run(&data)?;
                if config.save_checkpoints {
                    if let Some(model) = &b.last_model {
                        save_checkpoint(model, &run_dir.join("model.bin"))?;
                    }
                }
                report
            }
            BackboneKind::LastValue => LastValueBaseline.run(&data)?,
            BackboneKind::Linear => LinearBaseline::default().run(&data)?,
        };
        write(&run_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        Ok(report)
    })();
    match result {
        Ok(report) => record.report = Some(report),
        Err(e) => {
            log::error!("{dir}: {e}");
            record.error = Some(e.to_string());
        }
    }
    record
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    os: &'static str,
    arch: &'static str,
    dataset: &'a str,
    rows: usize,
    channels: usize,
    target: &'a str,
    config: &'a ExperimentConfig,
    runs: Vec<ManifestRun<'a>>,
}

#[derive(Serialize)]
struct ManifestRun<'a> {
    dir: &'a str,
    p: String,
    seed: u64,
    status: &'static str,
    error: Option<&'a str>,
    pca: Option<String>,
    checkpoint: Option<String>,
}

/// Runs the control and every requested component count, then writes
/// `metrics.csv`, `reductions.csv`, `info_kept.csv`, `pcc_<dataset>.csv`,
/// `manifest.json` and per-run artifacts under `runs/`. Failed runs are
/// recorded and the sweep carries on.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome, HarnessError> {
    let table = config.load()?;
    config.validate(table.n_channels())?;
    let dataset = config.dataset_name();
    let out = &config.out_dir;
    fs::create_dir_all(out.join("runs")).map_err(io_err(out))?;

    let cells = config.cells();
    let slots: Vec<Mutex<Option<RunRecord>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.jobs.clamp(1, cells.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let rec = run_cell(config, &table, &dataset, i, cells[i]);
                *slots[i].lock().expect("slot lock") = Some(rec);
            });
        }
    });
    let records: Vec<RunRecord> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every cell runs"))
        .collect();

    write(&out.join("metrics.csv"), metrics_csv(&records))?;

    let acc: Vec<MetricsRecord> = records.iter().filter_map(RunRecord::metrics).collect();
    let reductions = match analysis::reduction_table(&acc, &acc) {
        Ok(rows) => rows,
        Err(e) => {
            log::warn!("no reduction table: {e}");
            Vec::new()
        }
    };
    write(&out.join("reductions.csv"), analysis::reductions_csv(&reductions))?;

    let info_kept: Vec<InfoKeptRecord> = records
        .iter()
        .filter_map(|r| {
            let p = r.p_components?;
            Some(InfoKeptRecord::new(&dataset, table.n_channels(), p, r.information_kept?))
        })
        .collect();
    write(&out.join("info_kept.csv"), analysis::info_kept_csv(&info_kept))?;

    let pcc = pcc_matrix(&table);
    write(&out.join(format!("pcc_{dataset}.csv")), pcc.to_csv())?;

    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        os: std::env::consts::OS,
        arch: std::env::consts::ARCH,
        dataset: &dataset,
        rows: table.len(),
        channels: table.n_channels(),
        target: table.target_name(),
        config,
        runs: records
            .iter()
            .map(|r| {
                let dir = out.join("runs").join(&r.dir);
                let exists = |f: &str| dir.join(f).exists().then(|| format!("runs/{}/{f}", r.dir));
                ManifestRun {
                    dir: &r.dir,
                    p: p_label(r.p_components),
                    seed: r.seed,
                    status: if r.ok() { "ok" } else { "failed" },
                    error: r.error.as_deref(),
                    pca: exists("pca.json"),
                    checkpoint: exists("model.bin"),
                }
            })
            .collect(),
    };
    write(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    Ok(SweepOutcome {
        dataset,
        records,
        reductions,
        info_kept,
        pcc,
        out_dir: out.clone(),
    })
}

/// Writes the published accuracy/runtime cells as `metrics.csv` in `out` and
/// consolidates them into `reductions.csv`.
pub fn paper_fixture_sweep(out: &Path) -> Result<Vec<ReductionRow>, HarnessError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write(&out.join("metrics.csv"), PAPER_TABLES)?;
    let acc = parse_metrics_csv(PAPER_TABLES)?;
    let rows = analysis::reduction_table(&acc, &acc)?;
    write(&out.join("reductions.csv"), analysis::reductions_csv(&rows))?;
    Ok(rows)
}

pub fn correlate(table: &SeriesTable) -> PccMatrix {
    pcc_matrix(table)
}

/// Rendered report over a run directory.
#[derive(Debug, Clone)]
pub struct Report {
    pub markdown: String,
    pub reductions_csv: String,
    pub gaps: Vec<String>,
}

fn markdown_grid(acc: &[MetricsRecord], title: &str, cell: impl Fn(&MetricsRecord) -> String, columns: &[&str]) -> String {
    let datasets = analysis::first_appearance(acc.iter().map(|r| r.dataset.as_str()));
    let models = analysis::first_appearance(acc.iter().map(|r| r.model.as_str()));
    let mut out = format!("## {title}\n\n| Dataset | P |");
    for m in &models {
        for c in columns {
            let _ = write!(out, " {m} {c} |");
        }
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(models.len() * columns.len()));
    out.push('\n');
    for d in &datasets {
        let mut ps: Vec<Option<usize>> = acc.iter().filter(|r| &r.dataset == d).map(|r| r.p_components).collect();
        ps.sort_by_key(|&p| p_order(p));
        ps.dedup();
        for p in ps {
            let _ = write!(out, "| {d} | {} |", p_label(p));
            for m in &models {
                match acc.iter().find(|r| &r.dataset == d && &r.model == m && r.p_components == p) {
                    Some(r) => {
                        let _ = write!(out, " {} |", cell(r));
                    }
                    None => out.push_str(&" - |".repeat(columns.len())),
                }
            }
            out.push('\n');
        }
    }
    out.push('\n');
    out
}

fn fmt_runtime(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "GAP".into()
    }
}

/// Renders accuracy, runtime, reduction and information-kept tables from
/// `dir/metrics.csv` (and `dir/info_kept.csv` when present). A group whose
/// best row has no runtime becomes a gap.
pub fn build_report(dir: &Path) -> Result<Report, HarnessError> {
    let path = dir.join("metrics.csv");
    if !path.exists() {
        return Err(HarnessError::Config(format!("{} has no metrics.csv", dir.display())));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let acc = parse_metrics_csv(&text)?;
    if acc.is_empty() {
        return Err(HarnessError::Config(format!("{} has no completed runs", dir.display())));
    }
    let index = runtime_index(&acc);
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    for (d, m, group) in groups(&acc) {
        match reduce_group(&d, &m, &group, &index) {
            Ok(r) => rows.push(r),
            Err(e @ AnalysisError::MissingRuntime { .. }) => gaps.push(e.to_string()),
            Err(e) => log::info!("{e}"),
        }
    }

    let mut md = String::from("# Report\n\n");
    md.push_str(&markdown_grid(&acc, "Accuracy", |r| format!("{} | {}", r.mse, r.mae), &["MSE", "MAE"]));
    md.push_str(&markdown_grid(&acc, "Runtime (s)", |r| fmt_runtime(r.runtime_s), &["Time"]));
    md.push_str("## Reductions\n\n");
    if rows.is_empty() {
        md.push_str("No (dataset, model) group has both a control and a PCA run.\n");
    } else {
        let averages = average_reduction(&rows)?;
        md.push_str(&render_reductions_markdown(&rows, &averages));
    }
    for g in &gaps {
        let _ = writeln!(md, "\nGAP: {g}");
    }
    let info = dir.join("info_kept.csv");
    if info.exists() {
        let text = fs::read_to_string(&info).map_err(io_err(&info))?;
        md.push_str("\n## Information kept\n\n| Dataset | M | P | Kept | Ratio |\n|---|---:|---:|---:|---:|\n");
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 5 {
                let _ = writeln!(md, "| {} | {} | {} | {}% | {}% |", f[0], f[1], f[2], f[3], f[4]);
            }
        }
    }
    Ok(Report {
        markdown: md,
        reductions_csv: analysis::reductions_csv(&rows),
        gaps,
    })
}

/// Builds the report, writes `report.md` and `report_reductions.csv` into
/// `dir`, and fails if any gap was found.
pub fn report(dir: &Path) -> Result<Report, HarnessError> {
    let r = build_report(dir)?;
    write(&dir.join("report.md"), &r.markdown)?;
    write(&dir.join("report_reductions.csv"), &r.reductions_csv)?;
    if !r.gaps.is_empty() {
        return Err(HarnessError::Gaps(r.gaps.len()));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureCell {
    pub dataset: String,
    pub model: String,
    pub quantity: &'static str,
    pub expected: f64,
    pub computed: f64,
}

impl FixtureCell {
    pub fn ok(&self, tol: f64) -> bool {
        (self.expected - self.computed).abs() <= tol
    }
}

#[derive(Debug, Clone)]
pub struct FixtureCheck {
    pub cells: Vec<FixtureCell>,
    pub tolerance: f64,
}

impl FixtureCheck {
    pub fn passed(&self) -> bool {
        !self.cells.is_empty() && self.cells.iter().all(|c| c.ok(self.tolerance))
    }

    pub fn failures(&self) -> Vec<&FixtureCell> {
        self.cells.iter().filter(|c| !c.ok(self.tolerance)).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:<5} {:<18} {:<15} {:<7} expected {:>7.2}% computed {:>8.3}%",
                if c.ok(self.tolerance) { "ok" } else { "FAIL" },
                c.dataset,
                c.model,
                c.quantity,
                c.expected,
                c.computed
            );
        }
        out
    }
}

/// Label of the per-model averages in the published reductions table.
pub const AVERAGE_LABEL: &str = "Average Reduction";

/// Recomputes reductions from `tables` and compares every cell with
/// `expected`, including the per-model averages.
pub fn fixture_check(tables: &str, expected: &str) -> Result<FixtureCheck, HarnessError> {
    let acc = parse_metrics_csv(tables)?;
    let rows = analysis::reduction_table(&acc, &acc)?;
    let averages = average_reduction(&rows)?;
    let mut computed: BTreeMap<(String, String), (f64, f64)> = rows
        .iter()
        .map(|r| ((r.dataset.clone(), r.model.clone()), (r.mse_reduction_pct, r.runtime_reduction_pct)))
        .collect();
    for a in &averages {
        computed.insert(
            (AVERAGE_LABEL.to_string(), a.model.clone()),
            (a.mse_reduction_pct, a.runtime_reduction_pct),
        );
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(expected.as_bytes());
    let mut cells = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(AnalysisError::from)?;
        let key = (rec[0].to_string(), rec[1].to_string());
        let (mse, rt) = *computed
            .get(&key)
            .ok_or_else(|| HarnessError::Config(format!("no computed reduction for {}/{}", key.0, key.1)))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| HarnessError::Config(format!("bad percentage {s:?}")))
        };
        for (quantity, exp, got) in [("mse", parse(&rec[2])?, mse), ("runtime", parse(&rec[3])?, rt)] {
            cells.push(FixtureCell {
                dataset: key.0.clone(),
                model: key.1.clone(),
                quantity,
                expected: exp,
                computed: got,
            });
        }
    }
    Ok(FixtureCheck {
        cells,
        tolerance: FIXTURE_TOLERANCE_PP,
    })
}

pub fn paper_fixture_check() -> Result<FixtureCheck, HarnessError> {
    fixture_check(PAPER_TABLES, PAPER_REDUCTIONS)
}

/// Loads a CSV for one-off commands.
pub fn load_table(path: &Path, target: &str) -> Result<SeriesTable, HarnessError> {
    Ok(dataset::load_csv(path, target)?)
}
