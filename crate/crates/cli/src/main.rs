use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use pcaformer::dataset::PcaFitScope;
use pcaformer::harness::{self, BackboneKind, DatasetSource, ExperimentConfig, HarnessError, SyntheticSpec};

#[derive(Parser)]
#[command(name = "pcaformer", version, about = "PCA channel reduction for transformer forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download or import the benchmark CSVs and validate their shape.
    Fetch(FetchArgs),
    /// Pearson correlation matrix of every variable, as CSV.
    Correlate {
        csv: PathBuf,
        #[arg(long, default_value = "OT")]
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the control and every requested component count.
    Sweep(SweepArgs),
    /// Render tables from a sweep directory.
    Report { dir: PathBuf },
    /// Recompute reduction percentages from accuracy and runtime tables.
    FixtureCheck {
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long)]
        expected: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct FetchArgs {
    /// Datasets to fetch; all four when omitted.
    names: Vec<String>,
    #[arg(long, default_value = "data")]
    dir: PathBuf,
    /// Override or supply a download URL, as NAME=URL.
    #[arg(long = "url", value_parser = parse_pair)]
    urls: Vec<(String, String)>,
    /// Import an already downloaded file, as NAME=PATH.
    #[arg(long = "from", value_parser = parse_pair)]
    local: Vec<(String, String)>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitScope {
    Full,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Transformer,
    LastValue,
    Linear,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// JSON experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV dataset to sweep.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    /// Use the seeded latent-factor series instead of a file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<usize>>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    pca_fit: Option<FitScope>,
    #[arg(long, value_enum)]
    backbone: Option<BackboneArg>,
    /// Leave the target out of the model inputs.
    #[arg(long)]
    no_target_channel: bool,
    #[arg(long)]
    jobs: Option<usize>,
    /// Consolidate the published accuracy and runtime tables instead of training.
    #[arg(long)]
    paper_fixture: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))
}

struct Benchmark {
    name: &'static str,
    file: &'static str,
    rows: usize,
    variables: usize,
    url: Option<&'static str>,
}

const TARGET: &str = "OT";

const BENCHMARKS: [Benchmark; 4] = [
    Benchmark {
        name: "ETTh1",
        file: "ETTh1.csv",
        rows: 17420,
        variables: 7,
        url: Some("https://raw.githubusercontent.com/zhouhaoyi/ETDataset/main/ETT-small/ETTh1.csv"),
    },
    Benchmark {
        name: "Weather",
        file: "weather.csv",
        rows: 52696,
        variables: 21,
        url: None,
    },
    Benchmark {
        name: "Electricity",
        file: "electricity.csv",
        rows: 26304,
        variables: 321,
        url: None,
    },
    Benchmark {
        name: "Traffic",
        file: "traffic.csv",
        rows: 17544,
        variables: 862,
        url: None,
    },
];

fn benchmark(name: &str) -> Result<&'static Benchmark> {
    BENCHMARKS
        .iter()
        .find(|b| b.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| anyhow!("unknown dataset {name:?}; expected one of ETTh1, Weather, Electricity, Traffic"))
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn download(url: &str, dest: &Path) -> Result<()> {
    let tmp = dest.with_extension("part");
    let response = ureq::get(url).call().with_context(|| format!("GET {url}"))?;
    let mut reader = response.into_body().into_reader();
    let mut out = File::create(&tmp)?;
    io::copy(&mut reader, &mut out)?;
    out.flush()?;
    fs::rename(&tmp, dest)?;
    Ok(())
}

fn validate_shape(b: &Benchmark, path: &Path) -> Result<()> {
    let table = pcaformer::dataset::load_csv(path, TARGET)?;
    let vars = table.n_channels() + 1;
    if table.len() != b.rows || vars != b.variables {
        bail!(
            "{}: {} steps x {} variables, expected {} x {}",
            b.name,
            table.len(),
            vars,
            b.rows,
            b.variables
        );
    }
    Ok(())
}

fn cmd_fetch(args: FetchArgs) -> Result<()> {
    fs::create_dir_all(&args.dir)?;
    let urls: BTreeMap<String, String> = args.urls.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
    let local: BTreeMap<String, String> = args.local.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
    let names: Vec<String> = if args.names.is_empty() {
        BENCHMARKS.iter().map(|b| b.name.to_string()).collect()
    } else {
        args.names
    };
    let sums_path = args.dir.join("checksums.json");
    let mut sums: BTreeMap<String, String> = match fs::read_to_string(&sums_path) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(_) => BTreeMap::new(),
    };
    let mut failed = Vec::new();
    for name in &names {
        let b = benchmark(name)?;
        let dest = args.dir.join(b.file);
        let key = b.name.to_lowercase();
        let result = (|| -> Result<String> {
            if let Some(src) = local.get(&key) {
                fs::copy(src, &dest).with_context(|| format!("copy {src}"))?;
            } else if !dest.exists() {
                let url = urls
                    .get(&key)
                    .map(String::as_str)
                    .or(b.url)
                    .ok_or_else(|| anyhow!("no pinned URL; pass --url {}=URL or --from {}=PATH", b.name, b.name))?;
                download(url, &dest)?;
            }
            let digest = sha256_file(&dest)?;
            match sums.get(&key) {
                Some(pinned) if pinned != &digest => {
                    bail!("checksum {digest} does not match pinned {pinned}")
                }
                _ => {}
            }
            validate_shape(b, &dest)?;
            Ok(digest)
        })();
        match result {
            Ok(digest) => {
                println!("{} ok {} sha256 {digest}", b.name, dest.display());
                sums.insert(key, digest);
            }
            Err(e) => {
                eprintln!("{}: {e:#}", b.name);
                failed.push(b.name);
            }
        }
    }
    fs::write(&sums_path, serde_json::to_string_pretty(&sums)? + "\n")?;
    if !failed.is_empty() {
        bail!("fetch failed for {}", failed.join(", "));
    }
    Ok(())
}

fn sweep_config(args: &SweepArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &args.data {
        config.dataset = DatasetSource::Csv {
            path: path.clone(),
            target: args.target.clone().unwrap_or_else(|| TARGET.into()),
        };
    } else if let (Some(t), DatasetSource::Csv { target, .. }) = (&args.target, &mut config.dataset) {
        *target = t.clone();
    }
    if args.synthetic {
        config.dataset = DatasetSource::Synthetic(SyntheticSpec::default());
    }
    if let Some(c) = &args.components {
        config.components = c.clone();
    }
    if let Some(h) = args.horizon {
        config.transformer.horizon = h;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.transformer.epochs = e;
    }
    if let Some(scope) = args.pca_fit {
        config.pca_fit = match scope {
            FitScope::Full => PcaFitScope::Full,
            FitScope::Train => PcaFitScope::TrainOnly,
        };
    }
    if let Some(b) = args.backbone {
        config.backbone = match b {
            BackboneArg::Transformer => BackboneKind::Transformer,
            BackboneArg::LastValue => BackboneKind::LastValue,
            BackboneArg::Linear => BackboneKind::Linear,
        };
    }
    if args.no_target_channel {
        config.append_target = false;
    }
    if let Some(j) = args.jobs {
        config.jobs = j;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), HarnessError> {
    if args.paper_fixture {
        let out = args.out.clone().unwrap_or_else(|| PathBuf::from("paper_fixture"));
        let rows = harness::paper_fixture_sweep(&out)?;
        println!("consolidated {} published groups into {}", rows.len(), out.join("reductions.csv").display());
        return Ok(());
    }
    let config = sweep_config(&args)?;
    let outcome = harness::run_sweep(&config)?;
    for r in &outcome.records {
        match &r.report {
            Some(t) => println!(
                "{} P={:<8} mse {:.6} mae {:.6} runtime {:.2}s",
                r.dataset,
                pcaformer::analysis::p_label(r.p_components),
                t.test_mse,
                t.test_mae,
                t.runtime_seconds
            ),
            None => println!(
                "{} P={:<8} FAILED {}",
                r.dataset,
                pcaformer::analysis::p_label(r.p_components),
                r.error.as_deref().unwrap_or("")
            ),
        }
    }
    println!("wrote {}", outcome.out_dir.display());
    let failed = outcome.failures();
    if failed > 0 {
        return Err(HarnessError::RunsFailed {
            failed,
            total: outcome.records.len(),
        });
    }
    Ok(())
}

fn cmd_fixture_check(tables: Option<PathBuf>, expected: Option<PathBuf>) -> Result<bool, HarnessError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())));
    let tables = match tables {
        Some(p) => read(&p)?,
        None => harness::PAPER_TABLES.to_string(),
    };
    let expected = match expected {
        Some(p) => read(&p)?,
        None => harness::PAPER_REDUCTIONS.to_string(),
    };
    let check = harness::fixture_check(&tables, &expected)?;
    print!("{}", check.render());
    let failures = check.failures().len();
    println!(
        "{} of {} cells within ±{} pp",
        check.cells.len() - failures,
        check.cells.len(),
        check.tolerance
    );
    Ok(check.passed())
}

fn harness_exit(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger_init();
    let cli = Cli::parse();
    match cli.command {
        Command::Fetch(args) => match cmd_fetch(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
        Command::Correlate { csv, target, out } => {
            let table = match harness::load_table(&csv, &target) {
                Ok(t) => t,
                Err(e) => return harness_exit(e),
            };
            let text = harness::correlate(&table).to_csv();
            let written = match out {
                Some(path) => fs::write(&path, text),
                None => io::stdout().write_all(text.as_bytes()),
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Sweep(args) => match cmd_sweep(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => harness_exit(e),
        },
        Command::Report { dir } => match harness::report(&dir) {
            Ok(r) => {
                print!("{}", r.markdown);
                ExitCode::SUCCESS
            }
            Err(e) => harness_exit(e),
        },
        Command::FixtureCheck { tables, expected } => match cmd_fixture_check(tables, expected) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => harness_exit(e),
        },
    }
}

fn env_logger_init() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
}
