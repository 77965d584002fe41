//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
//! summary. Criteria that need the benchmark CSVs look in `$PCAFORMER_DATA`
//! or `<workspace>/data` (the default `pcaformer fetch` directory).
//!
//! The process fails when a gating criterion fails. Two failures are
//! reported without gating, unless `PCAFORMER_ACCEPTANCE_STRICT=1`: the
//! runtime half of criterion 7, and the real-data criteria 2 and 9 when the
//! CSVs are absent.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use pcaformer::analysis::PccMatrix;
use pcaformer::dataset::{
    prepare, ColumnStats, PcaFitScope, PipelineConfig, Reduction, SeriesTable, WindowBatch, WindowSet, WindowSpec,
};
use pcaformer::forecaster::{ForecastModel, ForwardMode, TransformerConfig};
use pcaformer::harness::{self, DatasetSource, ExperimentConfig, SyntheticSpec, RUNTIME_COLUMNS};
use pcaformer::numeric::{gaussian, Graph};
use pcaformer::pca::{self, PcaMethod};
use pcaformer::{Matrix, SeededRng};
use support::cases;

const FIXTURE_TOL_PP: f64 = 0.02;
const PCA_TOL: f64 = 1e-6;
const MSE_SLACK: f64 = 0.10;
const RUNTIME_CUT: f64 = 0.20;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure is reported but does not fail the run.
    exempt: bool,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            detail,
            exempt: false,
        }
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("PCAFORMER_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
            root.canonicalize().unwrap_or(root).join("data")
        })
}

fn benchmark(file: &str) -> Option<SeriesTable> {
    let path = data_dir().join(file);
    if !path.exists() {
        return None;
    }
    match harness::load_table(&path, "OT") {
        Ok(t) => Some(t),
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            None
        }
    }
}

fn missing(what: &str) -> Outcome {
    Outcome {
        pass: false,
        detail: format!("{what} not present in {}; run `pcaformer fetch`", data_dir().display()),
        exempt: true,
    }
}

fn fixture_consolidation() -> Outcome {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_pcaformer"))
        .arg("fixture-check")
        .output()
        .expect("binary runs");
    let secs = start.elapsed().as_secs_f64();
    let check = harness::paper_fixture_check().expect("fixtures parse");
    let stdout = String::from_utf8_lossy(&o.stdout);
    let named = [
        ("Electricity", "PatchTST", 2.14, 88.68),
        ("Electricity", "Crossformer", 14.27, 76.64),
    ];
    let cell = |d: &str, m: &str, q: &str| check.cells.iter().find(|c| c.dataset == d && c.model == m && c.quantity == q);
    let named_ok = named.iter().all(|&(d, m, mse, rt)| {
        [("mse", mse), ("runtime", rt)].iter().all(|&(q, want)| {
            cell(d, m, q).is_some_and(|c| (c.expected - want).abs() < 1e-9 && c.ok(FIXTURE_TOL_PP))
        })
    });
    let average = cell(harness::AVERAGE_LABEL, "iTransformer", "runtime")
        .is_some_and(|c| (c.computed - -8.08).abs() <= FIXTURE_TOL_PP);
    let pass = o.status.success() && check.passed() && named_ok && average && secs < 1.0;
    Outcome::new(
        pass,
        format!(
            "{} ({:.2}s, named cells {}, iTransformer average runtime {})",
            stdout.lines().last().unwrap_or("").trim(),
            secs,
            if named_ok { "ok" } else { "off" },
            if average { "-8.08" } else { "off" }
        ),
    )
}

fn information_kept() -> Outcome {
    let cases = [
        ("ETTh1.csv", 2, 70.1, 1.0),
        ("ETTh1.csv", 4, 99.6, 0.5),
        ("weather.csv", 2, 63.1, 1.0),
        ("electricity.csv", 80, 94.7, 1.0),
        ("traffic.csv", 1, 57.6, 1.0),
    ];
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (file, p, expected, tol) in cases {
        let Some(table) = benchmark(file) else {
            return missing(file);
        };
        let method = if table.n_channels() > 100 {
            PcaMethod::randomized()
        } else {
            PcaMethod::Exact
        };
        let model = pca::fit(table.channels(), p, method, &mut SeededRng::new(0)).expect("pca fit");
        let kept = 100.0 * model.information_kept(p).expect("p in range");
        let ok = (kept - expected).abs() <= tol;
        pass &= ok;
        parts.push(format!("{file} P={p} {kept:.1}% (want {expected}±{tol})"));
    }
    Outcome::new(pass, format!("{} in {:.0}s", parts.join(", "), start.elapsed().as_secs_f64()))
}

fn sign_free_diff(a: &Matrix, b: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for c in 0..a.cols() {
        let same = (0..a.rows()).map(|r| (a.get(r, c) - b.get(r, c)).abs()).fold(0.0, f64::max);
        let flip = (0..a.rows()).map(|r| (a.get(r, c) + b.get(r, c)).abs()).fold(0.0, f64::max);
        worst = worst.max(same.min(flip));
    }
    worst
}

fn pca_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(0xacce);
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let m = 1 + (rng.uniform(0.0, 8.0) as usize).min(7);
        let t = (m + 2 + rng.uniform(0.0, 93.0) as usize).min(100);
        let p = 1 + (rng.uniform(0.0, m as f64) as usize).min(m - 1);
        let h = gaussian(&mut rng, t, m).matmul(&gaussian(&mut rng, m, m)).unwrap();
        let exact = pca::fit(&h, p, PcaMethod::Exact, &mut SeededRng::new(i)).unwrap();
        let method = PcaMethod::Randomized {
            oversample: m - p,
            power_iters: 2,
        };
        let fast = pca::fit(&h, p, method, &mut SeededRng::new(i ^ 0xff)).unwrap();
        worst = worst.max(sign_free_diff(&exact.transform(&h).unwrap(), &fast.transform(&h).unwrap()));
    }
    Outcome::new(
        worst <= PCA_TOL,
        format!("50 instances, max score error {worst:.2e} in {:.2}s", start.elapsed().as_secs_f64()),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let ops = cases::all_ops();
    let (name, worst_op) = ops.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    let model = cases::micro_model();
    let secs = start.elapsed().as_secs_f64();
    let pass = ops.iter().all(|&(_, e)| e <= cases::OP_TOL) && model <= cases::MODEL_TOL && secs < 60.0;
    Outcome::new(
        pass,
        format!(
            "{} ops, worst {name} {worst_op:.2e}; micro model {model:.2e} in {secs:.1}s",
            ops.len()
        ),
    )
}

fn trended_table(t: usize, m: usize) -> SeriesTable {
    let mut data = gaussian(&mut SeededRng::new(31), t, m).as_slice().to_vec();
    for r in 0..t {
        for c in 0..m {
            data[r * m + c] += 0.02 * r as f64 * (c + 1) as f64;
        }
    }
    let channels = Matrix::from_vec(t, m, data).unwrap();
    let target = (0..t).map(|r| channels.row(r).iter().sum::<f64>()).collect();
    let names = (0..m).map(|c| format!("x{c}")).collect();
    SeriesTable::new(None, channels, target, names, "OT".into()).unwrap()
}

fn leakage_guards() -> Outcome {
    let clean = trended_table(600, 5);
    let poisoned = clean
        .with_target((0..600).map(|r| if r % 3 == 0 { 1e9 } else { -(r as f64) * 1e4 }).collect())
        .unwrap();
    let windows = WindowSpec {
        lookback: 24,
        label_len: 12,
        horizon: 8,
    };
    let reduction = Reduction {
        components: 2,
        method: PcaMethod::randomized(),
        seed: 5,
    };
    let mut poison_ok = true;
    for scope in [PcaFitScope::Full, PcaFitScope::TrainOnly] {
        let cfg = PipelineConfig {
            windows,
            pca_fit: scope,
            ..PipelineConfig::default()
        };
        let a = prepare(&clean, Some(&reduction), &cfg).unwrap();
        let b = prepare(&poisoned, Some(&reduction), &cfg).unwrap();
        poison_ok &= a.pca == b.pca;
    }

    let cfg = PipelineConfig {
        windows,
        ..PipelineConfig::default()
    };
    let d = prepare(&clean, None, &cfg).unwrap();
    let raw = clean.model_inputs(true);
    let mut stats_ok = ColumnStats::fit(d.ranges.train.clone().map(|r| clean.target()[r])) == d.target_stats;
    for c in 0..raw.cols() {
        let train = ColumnStats::fit(d.ranges.train.clone().map(|r| raw.get(r, c)));
        let val = ColumnStats::fit(d.ranges.val.clone().map(|r| raw.get(r, c)));
        stats_ok &= d.input_stats.columns[c] == train && val.mean != train.mean;
    }

    let mut chrono_ok = true;
    let mut windows_seen = 0;
    for (set, range) in [(&d.train, &d.ranges.train), (&d.val, &d.ranges.val), (&d.test, &d.ranges.test)] {
        for i in 0..set.len() {
            let (enc, hor) = (set.encoder_rows(i), set.horizon_rows(i));
            chrono_ok &= enc.end - 1 < hor.start && enc.start >= range.start && hor.end <= range.end;
            windows_seen += 1;
        }
    }
    Outcome::new(
        poison_ok && stats_ok && chrono_ok,
        format!(
            "poisoned-target PCA {}, train-only stats {}, chronology over {windows_seen} windows {}",
            verdict(poison_ok),
            verdict(stats_ok),
            verdict(chrono_ok)
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "held"
    } else {
        "VIOLATED"
    }
}

fn decoder_head(model: &ForecastModel, batch: &WindowBatch) -> Vec<f64> {
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let (_, out) = model.forward_full(&mut g, &ids, batch, ForwardMode::Eval).unwrap();
    g.value(out).as_slice().to_vec()
}

fn causality() -> Outcome {
    let spec = WindowSpec {
        lookback: 16,
        label_len: 8,
        horizon: 8,
    };
    let c = 4;
    let mut rng = SeededRng::new(41);
    let inputs = gaussian(&mut rng, 80, c);
    let target = inputs.col(0);
    let set = WindowSet::new(Arc::new(inputs), Arc::new(target), 0..80, spec).unwrap();
    let config = TransformerConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        encoder_layers: 2,
        decoder_layers: 2,
        lookback: 16,
        label_len: 8,
        horizon: 8,
        input_channels: c,
        dropout: 0.0,
        ..TransformerConfig::default()
    };
    let model = ForecastModel::new(config).unwrap();
    let batch = set.batch(&[0, 5, 20]);
    let dec_len = spec.label_len + spec.horizon;
    let base = decoder_head(&model, &batch);
    let mut checked = 0;
    let mut ok = true;
    for pos in 1..dec_len {
        let mut probe = batch.clone();
        let mut raw = probe.decoder_input.as_slice().to_vec();
        for w in 0..batch.size {
            for ch in 0..c {
                raw[(w * dec_len + pos) * c + ch] += 1.5 + ch as f64;
            }
        }
        probe.decoder_input = Matrix::from_vec(batch.size * dec_len, c, raw).unwrap();
        let moved = decoder_head(&model, &probe);
        for w in 0..batch.size {
            for t in 0..pos {
                let i = w * dec_len + t;
                ok &= base[i].to_bits() == moved[i].to_bits();
                checked += 1;
            }
            ok &= base[w * dec_len + pos] != moved[w * dec_len + pos];
        }
    }
    Outcome::new(ok, format!("{checked} earlier outputs compared bit-for-bit, 2 decoder layers"))
}

fn latent_sweep(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: Some("latent".into()),
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            timesteps: 5000,
            channels: 10,
            latent: 2,
            noise: 0.05,
            seed: 7,
        }),
        components: vec![2],
        seed: 11,
        transformer: TransformerConfig {
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            lookback: 48,
            label_len: 24,
            horizon: 16,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 10,
            patience: 3,
            dropout: 0.0,
            ..TransformerConfig::default()
        },
        out_dir: out.to_path_buf(),
        save_checkpoints: false,
        jobs: 1,
        ..ExperimentConfig::default()
    }
}

fn directional_claim() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let outcome = harness::run_sweep(&latent_sweep(dir.path())).expect("sweep runs");
    let secs = start.elapsed().as_secs_f64();
    let report = |p: Option<usize>| {
        outcome
            .records
            .iter()
            .find(|r| r.p_components == p)
            .and_then(|r| r.report.clone())
            .expect("run finished")
    };
    let (pca, control) = (report(Some(2)), report(None));
    let mse_ratio = pca.test_mse / control.test_mse;
    let cut = 1.0 - pca.runtime_seconds / control.runtime_seconds;
    let flop_cut = 1.0 - pca.flops_per_epoch as f64 / control.flops_per_epoch as f64;
    let accuracy_ok = mse_ratio <= 1.0 + MSE_SLACK;
    let runtime_ok = cut >= RUNTIME_CUT;
    let detail = format!(
        "MSE {:.4} vs {:.4} (ratio {:.3}, {}), runtime {:.1}s vs {:.1}s (cut {:.1}%, want ≥{:.0}%), \
         epochs {} vs {}, per-epoch FLOPs cut {:.1}%, wall {:.0}s",
        pca.test_mse,
        control.test_mse,
        mse_ratio,
        if accuracy_ok { "within 10%" } else { "outside 10%" },
        pca.runtime_seconds,
        control.runtime_seconds,
        100.0 * cut,
        100.0 * RUNTIME_CUT,
        pca.epoch_train_loss.len(),
        control.epoch_train_loss.len(),
        100.0 * flop_cut,
        secs
    );
    Outcome {
        pass: accuracy_ok && runtime_ok && secs < 600.0,
        detail,
        exempt: accuracy_ok && !runtime_ok,
    }
}

fn without_runtime(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !RUNTIME_COLUMNS.contains(&header[i])).collect();
    let mut out = String::new();
    for line in std::iter::once(header.join(",")).chain(lines.map(str::to_string)) {
        let f: Vec<&str> = line.split(',').collect();
        out.push_str(&keep.iter().map(|&i| f[i]).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn determinism() -> Outcome {
    let run = |jobs: usize| {
        let dir = tempfile::tempdir().unwrap();
        let mut config = latent_sweep(dir.path());
        config.dataset = DatasetSource::Synthetic(SyntheticSpec {
            timesteps: 600,
            ..SyntheticSpec::default()
        });
        config.components = vec![1, 2, 5];
        config.transformer.epochs = 2;
        config.transformer.dropout = 0.1;
        config.transformer.lookback = 24;
        config.transformer.label_len = 12;
        config.transformer.horizon = 8;
        config.jobs = jobs;
        harness::run_sweep(&config).expect("sweep runs");
        std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()
    };
    let (a, b) = (run(1), run(4));
    let rows = a.lines().count() - 1;
    let same = without_runtime(&a) == without_runtime(&b);
    Outcome::new(
        same && rows == 4,
        format!("{rows} runs per sweep (1 and 4 workers), metrics.csv without runtime columns {}", if same { "identical" } else { "differ" }),
    )
}

fn pcc_is_valid(p: &PccMatrix) -> bool {
    let n = p.size();
    (0..n).all(|i| {
        p.matrix.get(i, i) == 1.0
            && (0..n).all(|j| {
                let v = p.matrix.get(i, j);
                (-1.0..=1.0).contains(&v) && v == p.matrix.get(j, i)
            })
    })
}

fn pcc_properties() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (file, size) in [("ETTh1.csv", Some(7)), ("weather.csv", None), ("electricity.csv", None), ("traffic.csv", None)] {
        let Some(table) = benchmark(file) else {
            return missing(file);
        };
        let p = harness::correlate(&table);
        let ok = pcc_is_valid(&p) && size.is_none_or(|s| p.size() == s);
        pass &= ok;
        parts.push(format!("{file} {}×{} {}", p.size(), p.size(), if ok { "ok" } else { "bad" }));
    }
    Outcome::new(pass, parts.join(", "))
}

fn main() -> ExitCode {
    let strict = std::env::var("PCAFORMER_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [Criterion; 9] = [
        ("fixture consolidation", fixture_consolidation),
        ("information kept, real data", information_kept),
        ("PCA oracle equivalence", pca_oracle),
        ("gradient suite", gradient_suite),
        ("leakage guards", leakage_guards),
        ("decoder causality", causality),
        ("directional desk-scale claim", directional_claim),
        ("sweep determinism", determinism),
        ("PCC properties", pcc_properties),
    ];
    let mut passed = 0;
    let mut blocking = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{}] criterion {}: {name}: {}", tag, i + 1, o.detail);
        if o.pass {
            passed += 1;
        } else if strict || !o.exempt {
            blocking += 1;
        }
    }
    println!("{passed} of {} criteria passed, {blocking} blocking failures", criteria.len());
    if blocking > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
