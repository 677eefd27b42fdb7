//! Command-line driver binding the experiment library end to end: dataset
//! generation, label-noise injection, training runs, seed replication, the
//! two-stage hyperparameter sweep, comparison tables, and tidy plot-data
//! reports.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! runtime failures. Every subcommand finishes with a machine-parseable
//! summary line on standard output, never mutates its input files, and is
//! fully determined by its seed. When no seed is given anywhere, the
//! `NLL_SEED` environment variable is consulted before falling back to 0.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nll_core::config::{
    merge_overrides, parse_class_map, parse_groups, parse_kv_text, Entry, ExperimentConfig,
};
use nll_core::data::{generate_synthetic, SyntheticSpec};
use nll_core::harness::{
    ablation_augment_strength, ablation_mixed_loss, ablation_no_consistency, run_experiment,
    run_replicated, run_sweep, write_sweep_csv, AblationRow, MixedRow, SweepGrid,
};
use nll_core::metrics::{read_metrics_csv, MetricsRecord};
use nll_core::noise::{noise_stats, NoiseSpec, NoisyDataset};
use nll_core::stats::mean_std;
use nll_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nll",
    version,
    about = "Label-noise robustness experiments: consistency-regularized training, sweeps, and reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-cluster dataset CSV
    GenData(GenDataArgs),
    /// Inject label noise into a dataset CSV
    InjectNoise(InjectNoiseArgs),
    /// Train one model and write its metrics CSV
    Train(RunArgs),
    /// Train the same configuration across seeds and aggregate
    Replicate(ReplicateArgs),
    /// Two-stage hyperparameter search over (lr, wd) then the method parameter
    Sweep(SweepArgs),
    /// Comparison tables: consistency-term, mixed-loss, or augment-strength
    Ablation(AblationArgs),
    /// Tidy plot-data CSVs and summaries from metrics files
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of classes
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Examples per class
    #[arg(long, default_value_t = 1000)]
    per_class: usize,
    /// Feature dimension (must be >= classes)
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Distance of each class mean from the origin
    #[arg(long, default_value_t = 3.6)]
    separation: f64,
    /// Within-class standard deviation
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Dataset seed (falls back to NLL_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum NoiseKindArg {
    Symmetric,
    AsymmetricMap,
    AsymmetricCycle,
}

#[derive(Args)]
struct InjectNoiseArgs {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = NoiseKindArg::Symmetric)]
    noise_kind: NoiseKindArg,
    /// Corruption rate in [0, 1]
    #[arg(long)]
    noise_rate: f64,
    /// `from:to` pairs for asymmetric-map noise, e.g. "9:1,5:3"
    #[arg(long)]
    class_map: Option<String>,
    /// Cycle groups for asymmetric-cycle noise, e.g. "0,1,2;3,4"
    #[arg(long)]
    groups: Option<String>,
    /// Injection seed (falls back to NLL_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by every training-backed subcommand. They map 1:1 onto
/// config-file keys and win over the file on conflict.
#[derive(Args, Clone)]
struct RunArgs {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss keyword: ce, js, gjs, js-mean, gce, sce, bs, or ls
    #[arg(long)]
    loss: Option<String>,
    /// Label weight for the JS family, in (0, 1)
    #[arg(long)]
    pi: Option<f64>,
    /// symmetric, asymmetric-map, or asymmetric-cycle
    #[arg(long)]
    noise_kind: Option<String>,
    /// Corruption rate in [0, 1]
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Run seed (falls back to the config file, NLL_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated run seeds (at least 2)
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Parallel workers for independent runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Stage-1 learning-rate grid
    #[arg(long, value_delimiter = ',')]
    lrs: Option<Vec<f64>>,
    /// Stage-1 weight-decay grid
    #[arg(long, value_delimiter = ',')]
    wds: Option<Vec<f64>>,
    /// Stage-2 method-parameter grid
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    /// Stage-2 noise rates
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Stage-1 symmetric noise rate
    #[arg(long)]
    stage1_rate: Option<f64>,
    /// Parallel workers for independent runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Sweep table CSV path
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum AblationMode {
    NoConsistency,
    MixedLoss,
    AugmentStrength,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long, value_enum)]
    mode: AblationMode,
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated run seeds (default: the config seed alone)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// π grid for mixed-loss mode
    #[arg(long, value_delimiter = ',')]
    pis: Option<Vec<f64>>,
    /// Parallel workers for independent runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Comparison table CSV path
    #[arg(long)]
    table: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSV files, one per run
    #[arg(long, num_args = 1.., required = true)]
    metrics: Vec<PathBuf>,
    /// Directory receiving the tidy plot-data CSVs
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } | Error::InvalidParameter(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::InjectNoise(args) => inject_noise(args),
        Command::Train(args) => train(args),
        Command::Replicate(args) => replicate(args),
        Command::Sweep(args) => sweep(args),
        Command::Ablation(args) => ablation(args),
        Command::Report(args) => report(args),
    }
}

/// NLL_SEED environment fallback; an unparseable value is a config error.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("NLL_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("NLL_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), |v| format!("{v}"))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        k: args.classes,
        n_per_class: args.per_class,
        dim: args.dim,
        separation: args.separation,
        sigma: args.sigma,
    };
    let seed = resolve_seed(args.seed)?;
    let ds = generate_synthetic(&spec, seed)?;
    ds.write_csv(&args.out)?;
    println!("wrote={} rows={}", args.out.display(), ds.len());
    Ok(())
}

fn inject_noise(args: InjectNoiseArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let spec = match args.noise_kind {
        NoiseKindArg::Symmetric => {
            if args.class_map.is_some() || args.groups.is_some() {
                return Err(Error::Config(
                    "--class-map and --groups only apply to asymmetric noise kinds".into(),
                ));
            }
            NoiseSpec::symmetric(args.noise_rate, seed)
        }
        NoiseKindArg::AsymmetricMap => {
            if args.groups.is_some() {
                return Err(Error::Config("--groups requires --noise-kind asymmetric-cycle".into()));
            }
            let map = args
                .class_map
                .as_deref()
                .ok_or_else(|| Error::Config("asymmetric-map noise requires --class-map".into()))?;
            NoiseSpec::asymmetric_map(args.noise_rate, parse_class_map(map)?, seed)
        }
        NoiseKindArg::AsymmetricCycle => {
            if args.class_map.is_some() {
                return Err(Error::Config("--class-map requires --noise-kind asymmetric-map".into()));
            }
            let groups = args
                .groups
                .as_deref()
                .ok_or_else(|| Error::Config("asymmetric-cycle noise requires --groups".into()))?;
            NoiseSpec::asymmetric_cycle(args.noise_rate, parse_groups(groups)?, seed)
        }
    };
    let mut ds = NoisyDataset::read_csv(&args.data)?;
    let t = spec.transition(ds.n_classes)?;
    ds.inject(&t, spec.seed)?;
    ds.write_csv(&args.out)?;
    let stats = noise_stats(&ds);
    println!(
        "wrote={} flipped={} fraction={}",
        args.out.display(),
        stats.flipped,
        stats.overall_fraction
    );
    Ok(())
}

/// Assemble the experiment config from file plus flag overrides (flags win).
/// Seed precedence: --seed flag, then the file's `seed` key, then NLL_SEED,
/// then 0.
fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let base: Vec<Entry> = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            parse_kv_text(&text)?
        }
        None => Vec::new(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(v) = &args.loss {
        overrides.push(("loss".into(), v.clone()));
    }
    if let Some(v) = args.pi {
        overrides.push(("pi".into(), format!("{v}")));
    }
    if let Some(v) = &args.noise_kind {
        overrides.push(("noise_kind".into(), v.clone()));
    }
    if let Some(v) = args.noise_rate {
        overrides.push(("noise_rate".into(), format!("{v}")));
    }
    match args.seed {
        Some(s) => overrides.push(("seed".into(), format!("{s}"))),
        None => {
            if !base.iter().any(|(k, _, _)| k == "seed") {
                if let Some(s) = env_seed()? {
                    overrides.push(("seed".into(), format!("{s}")));
                }
            }
        }
    }
    if let Some(v) = &args.out {
        overrides.push(("out".into(), v.display().to_string()));
    }
    ExperimentConfig::from_entries(&merge_overrides(base, &overrides)?)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn train(args: RunArgs) -> Result<()> {
    let config = build_config(&args)?;
    let result = run_experiment(&config)?;
    println!(
        "final_test_acc={} peak_val_acc={}",
        fmt_opt(result.final_test_acc),
        result.peak_val_acc
    );
    Ok(())
}

fn replicate(args: ReplicateArgs) -> Result<()> {
    let config = build_config(&args.run)?;
    let pool = thread_pool(args.jobs)?;
    let outcome = pool.install(|| run_replicated(&config, &args.seeds))?;
    for r in &outcome.results {
        println!("seed={} final_test_acc={}", r.seed, fmt_opt(r.final_test_acc));
    }
    println!(
        "mean_final_test_acc={} std_final_test_acc={}",
        outcome.mean_final_test_acc, outcome.std_final_test_acc
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let config = build_config(&args.run)?;
    let mut grid = SweepGrid::default();
    if let Some(v) = args.lrs {
        grid.learning_rates = v;
    }
    if let Some(v) = args.wds {
        grid.weight_decays = v;
    }
    if let Some(v) = args.params {
        grid.method_params = v;
    }
    if let Some(v) = args.rates {
        grid.noise_rates = v;
    }
    if let Some(v) = args.stage1_rate {
        grid.stage1_rate = v;
    }
    let pool = thread_pool(args.jobs)?;
    let outcome = pool.install(|| run_sweep(&grid, &config))?;
    if let Some(path) = &args.table {
        write_sweep_csv(&outcome, path)?;
    }
    let best_params: Vec<String> = outcome
        .best_params
        .iter()
        .map(|(rate, p)| format!("{rate}:{p}"))
        .collect();
    println!(
        "runs={} best_lr={} best_wd={} best_params={}",
        outcome.rows.len(),
        outcome.best_lr,
        outcome.best_wd,
        best_params.join(";")
    );
    Ok(())
}

fn write_ablation_rows(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "label,n_seeds,mean_final_test_acc,std_final_test_acc,mean_peak_val_acc")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.label, r.n_seeds, r.mean_final_test_acc, r.std_final_test_acc, r.mean_peak_val_acc
        )?;
    }
    f.flush()?;
    Ok(())
}

/// The mixed-loss grid as a wide table: one row per (clean, noisy) pair, one
/// column per π holding the mean final test accuracy.
fn write_mixed_rows(path: &Path, pis: &[f64], rows: &[MixedRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let pi_cols: Vec<String> = pis.iter().map(|p| format!("pi_{p}")).collect();
    writeln!(f, "clean_loss,noisy_loss,{}", pi_cols.join(","))?;
    for r in rows {
        let cells: Vec<String> = r.cells.iter().map(|c| format!("{}", c.mean_final_test_acc)).collect();
        writeln!(f, "{},{},{}", r.clean, r.noisy, cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn ablation(args: AblationArgs) -> Result<()> {
    let config = build_config(&args.run)?;
    if args.pis.is_some() && args.mode != AblationMode::MixedLoss {
        return Err(Error::Config("--pis only applies to --mode mixed-loss".into()));
    }
    let seeds = args.seeds.unwrap_or_else(|| vec![config.train.seed]);
    let pool = thread_pool(args.jobs)?;
    let rows_written = match args.mode {
        AblationMode::NoConsistency => {
            let rows = pool.install(|| ablation_no_consistency(&config, &seeds))?;
            write_ablation_rows(&args.table, &rows)?;
            rows.len()
        }
        AblationMode::AugmentStrength => {
            let rows = pool.install(|| ablation_augment_strength(&config, &seeds))?;
            write_ablation_rows(&args.table, &rows)?;
            rows.len()
        }
        AblationMode::MixedLoss => {
            let pis = args.pis.unwrap_or_else(|| vec![0.1, 0.3, 0.5, 0.7, 0.9]);
            let rows = pool.install(|| ablation_mixed_loss(&config, &pis, &seeds))?;
            write_mixed_rows(&args.table, &pis, &rows)?;
            rows.len()
        }
    };
    println!("wrote={} rows={}", args.table.display(), rows_written);
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string()
}

/// A tidy-output series: its name and how to read it off a metrics record.
type Column = (&'static str, fn(&MetricsRecord) -> Option<f64>);

/// Tidy (epoch, series, value) rows for one plot family, one series per
/// input file and column, None cells skipped.
fn write_tidy(path: &Path, inputs: &[(String, Vec<MetricsRecord>)], columns: &[Column]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,series,value")?;
    for (stem, records) in inputs {
        for (name, get) in columns {
            for r in records {
                if let Some(v) = get(r) {
                    writeln!(f, "{},{stem}/{name},{v}", r.epoch)?;
                }
            }
        }
    }
    f.flush()?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut inputs: Vec<(String, Vec<MetricsRecord>)> = Vec::new();
    for path in &args.metrics {
        let records = read_metrics_csv(path).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        inputs.push((file_stem(path), records));
    }
    std::fs::create_dir_all(&args.out_dir)?;

    let consistency: [Column; 3] = [
        ("cons_all", |r| Some(r.cons_all)),
        ("cons_clean", |r| r.cons_clean),
        ("cons_noisy", |r| r.cons_noisy),
    ];
    let accuracy: [Column; 4] = [
        ("val_acc", |r| Some(r.val_acc)),
        ("test_acc", |r| r.test_acc),
        ("train_acc_clean", |r| r.train_acc_clean),
        ("train_acc_noisy", |r| r.train_acc_noisy),
    ];
    let loss: [Column; 1] = [("loss", |r| Some(r.loss))];
    write_tidy(&args.out_dir.join("consistency.csv"), &inputs, &consistency)?;
    write_tidy(&args.out_dir.join("accuracy.csv"), &inputs, &accuracy)?;
    write_tidy(&args.out_dir.join("loss.csv"), &inputs, &loss)?;

    let mut finals = Vec::new();
    for (stem, records) in &inputs {
        let peak = records.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
        let last = records.last().ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("{stem}: no metric records"),
        })?;
        println!(
            "file={stem} peak_val_acc={peak} final_val_acc={} final_test_acc={}",
            last.val_acc,
            fmt_opt(last.test_acc)
        );
        if let Some(t) = last.test_acc {
            finals.push(t);
        }
    }
    let (mean, std) = match finals.is_empty() {
        true => (f64::NAN, f64::NAN),
        false => mean_std(&finals)?,
    };
    println!("mean_final_test_acc={} std_final_test_acc={}", fmt_nan(mean), fmt_nan(std));
    Ok(())
}

fn fmt_nan(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}
