//! End-to-end experiment orchestration: dataset assembly, clean stratified
//! splits, noise injection into the training portion only, the training loop
//! with per-stride metrics records, seed replication with aggregates, the
//! two-stage hyperparameter sweep, and the comparison-table ablation modes.
//!
//! Seed fan-out: `data_seed` fixes the dataset (means, train pool, test set)
//! independently of the run seed; the run seed (`train.seed`) derives the
//! split, noise-injection, parameter-init, shuffle/augment, and metrics
//! streams. Two methods compared at the same run seed therefore train on the
//! identical noise realization.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment::{AugmentSpec, Strength};
use crate::config::{AugmentChoice, DatasetSource, ExperimentConfig};
use crate::data::{class_means, mean_feature_std, sample_from_means, split};
use crate::loss::LossSpec;
use crate::metrics::{accuracy, train_set_report, LabelField, MetricsRecord};
use crate::model::init_params;
use crate::noise::{NoiseSpec, NoisyDataset};
use crate::optim::OptimizerState;
use crate::seeding::{child_seed, tag};
use crate::stats::mean_std;
use crate::train::{lr_at_epoch, train_epoch, LossAssignment};
use crate::{Error, Result};

/// Hidden layer widths of the experiment model (input/output dims come from
/// the data).
pub const HIDDEN: [usize; 2] = [64, 64];

/// One training run's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub peak_val_acc: f64,
    pub final_val_acc: f64,
    /// Absent when the run has no clean test set (CSV datasets, or
    /// `test_per_class = 0`).
    pub final_test_acc: Option<f64>,
}

/// Run one experiment: build the data, split, inject noise into the training
/// side, train, and record metrics every `metrics_stride` epochs (writing
/// and flushing each CSV row as it lands, so an interrupted run leaves a
/// readable partial file).
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let run_seed = config.train.seed;

    let (pool, test_set) = match &config.dataset {
        DatasetSource::Synthetic(spec) => {
            let means = class_means(spec, child_seed(config.data_seed, tag::MEANS))?;
            let pool = sample_from_means(
                &means,
                spec.sigma,
                spec.n_per_class,
                child_seed(config.data_seed, tag::SAMPLES),
            )?;
            let test = if config.test_per_class > 0 {
                Some(sample_from_means(
                    &means,
                    spec.sigma,
                    config.test_per_class,
                    child_seed(config.data_seed, tag::TEST_SAMPLES),
                )?)
            } else {
                None
            };
            (pool, test)
        }
        DatasetSource::Csv(path) => (NoisyDataset::read_csv(path)?, None),
    };

    let (mut train_set, val_set) =
        split(&pool, config.validation_fraction, child_seed(run_seed, tag::SPLIT))?;
    // Rate zero leaves the training labels exactly as loaded (a pre-noised
    // CSV keeps its noise; a clean set stays clean). A positive rate
    // re-injects from the true labels.
    if config.noise.rate > 0.0 {
        let mut noise = config.noise.clone();
        noise.seed = child_seed(run_seed, tag::NOISE);
        let t = noise.transition(train_set.n_classes)?;
        train_set.inject(&t, noise.seed)?;
    }

    let feature_std = mean_feature_std(&train_set)?;
    let train_aug = config.augment.resolve(feature_std)?;
    // Consistency is always measured against one full-strength view,
    // whatever augmentation training used.
    let measure_aug = AugmentSpec::full(feature_std)?;

    let sizes = [train_set.dim(), HIDDEN[0], HIDDEN[1], train_set.n_classes];
    let mut params = init_params(&sizes, child_seed(run_seed, tag::INIT))?;
    let mut state = OptimizerState::new(&params);
    let metrics_base = child_seed(run_seed, tag::METRICS);

    let mut writer = match &config.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut f = std::fs::File::create(path)?;
            writeln!(f, "{}", MetricsRecord::CSV_HEADER)?;
            f.flush()?;
            Some(f)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(config.train.epochs / config.metrics_stride);
    for epoch in 0..config.train.epochs {
        let loss = train_epoch(
            &mut params,
            &mut state,
            &train_set,
            &train_aug,
            &config.assignment,
            &config.train,
            epoch,
        )?;
        if (epoch + 1) % config.metrics_stride != 0 {
            continue;
        }
        let report = train_set_report(
            &params,
            &train_set,
            &measure_aug,
            child_seed(metrics_base, epoch as u64),
        )?;
        let val_acc = accuracy(&params, &val_set, LabelField::Observed)?;
        let test_acc = match &test_set {
            Some(t) => Some(accuracy(&params, t, LabelField::Observed)?),
            None => None,
        };
        let record = MetricsRecord {
            epoch: epoch + 1,
            lr: lr_at_epoch(&config.train, epoch)?,
            loss,
            val_acc,
            test_acc,
            cons_all: report.cons_all,
            cons_clean: report.cons_clean,
            cons_noisy: report.cons_noisy,
            train_acc_clean: report.acc_clean,
            train_acc_noisy: report.acc_noisy,
        };
        record.validate()?;
        if let Some(f) = writer.as_mut() {
            writeln!(f, "{}", record.to_csv_row())?;
            f.flush()?;
        }
        records.push(record);
    }

    let peak_val_acc = records.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
    let last = records.last().expect("stride divides epochs, so the last epoch records");
    Ok(RunResult {
        seed: run_seed,
        peak_val_acc,
        final_val_acc: last.val_acc,
        final_test_acc: last.test_acc,
        records,
    })
}

/// Per-seed output path: `metrics.csv` becomes `metrics_seed7.csv`.
pub fn seed_out_path(base: &Path, seed: u64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_seed{seed}.{ext}"),
        None => format!("{stem}_seed{seed}"),
    };
    base.with_file_name(name)
}

/// Seed-replicated runs with their final-test-accuracy aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub results: Vec<RunResult>,
    pub final_test_accs: Vec<f64>,
    pub mean_final_test_acc: f64,
    pub std_final_test_acc: f64,
}

/// Run the experiment once per seed (in parallel when a thread pool offers
/// more than one worker; results keep seed order either way) and aggregate
/// final clean-test accuracy across seeds.
pub fn run_replicated(config: &ExperimentConfig, seeds: &[u64]) -> Result<ReplicateOutcome> {
    if seeds.len() < 2 {
        return Err(Error::InvalidParameter(
            "replication needs at least 2 seeds".into(),
        ));
    }
    let configs: Vec<ExperimentConfig> = seeds
        .iter()
        .map(|&s| {
            let mut c = config.clone();
            c.train.seed = s;
            c.out = config.out.as_ref().map(|p| seed_out_path(p, s));
            c
        })
        .collect();
    let results: Vec<RunResult> = configs
        .par_iter()
        .map(run_experiment)
        .collect::<Result<Vec<_>>>()?;
    let final_test_accs: Vec<f64> = results
        .iter()
        .map(|r| {
            r.final_test_acc.ok_or_else(|| {
                Error::InvalidParameter(
                    "replication aggregates final test accuracy, but the runs have no test set"
                        .into(),
                )
            })
        })
        .collect::<Result<_>>()?;
    let (mean, std) = mean_std(&final_test_accs)?;
    Ok(ReplicateOutcome {
        results,
        final_test_accs,
        mean_final_test_acc: mean,
        std_final_test_acc: std,
    })
}

/// The method hyperparameter a sweep grids over, when the loss has one.
pub fn method_param_of(spec: &LossSpec) -> Option<f64> {
    match spec {
        LossSpec::Js { pi } | LossSpec::Gjs { pi } | LossSpec::JsMeanAblation { pi } => Some(*pi),
        LossSpec::Gce { q } => Some(*q),
        LossSpec::BootstrapSoft { beta } => Some(*beta),
        LossSpec::LabelSmoothing { epsilon } => Some(*epsilon),
        LossSpec::CrossEntropy | LossSpec::Sce { .. } => None,
    }
}

/// The same loss with its method hyperparameter replaced.
pub fn with_method_param(spec: &LossSpec, value: f64) -> Result<LossSpec> {
    let out = match spec {
        LossSpec::Js { .. } => LossSpec::Js { pi: value },
        LossSpec::Gjs { .. } => LossSpec::Gjs { pi: value },
        LossSpec::JsMeanAblation { .. } => LossSpec::JsMeanAblation { pi: value },
        LossSpec::Gce { .. } => LossSpec::Gce { q: value },
        LossSpec::BootstrapSoft { .. } => LossSpec::BootstrapSoft { beta: value },
        LossSpec::LabelSmoothing { .. } => LossSpec::LabelSmoothing { epsilon: value },
        LossSpec::CrossEntropy | LossSpec::Sce { .. } => {
            return Err(Error::InvalidParameter(format!(
                "loss {} has no single method hyperparameter to sweep",
                spec.name()
            )))
        }
    };
    out.validate()?;
    Ok(out)
}

/// The two-stage search space: stage 1 grids (lr, wd) at a fixed symmetric
/// noise rate; stage 2 grids the method hyperparameter per noise setting at
/// the stage-1 winner.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub method_params: Vec<f64>,
    /// Noise rates evaluated in stage 2, under the base config's noise kind.
    pub noise_rates: Vec<f64>,
    /// Stage-1 symmetric noise rate.
    pub stage1_rate: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.01, 0.05, 0.1, 0.2],
            weight_decays: vec![1e-4, 1e-3],
            method_params: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            noise_rates: vec![0.4],
            stage1_rate: 0.4,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self.weight_decays.is_empty()
            || self.method_params.is_empty()
            || self.noise_rates.is_empty()
        {
            return Err(Error::InvalidParameter("sweep grids must be nonempty".into()));
        }
        for &r in self.noise_rates.iter().chain(std::iter::once(&self.stage1_rate)) {
            if !r.is_finite() || !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidParameter(format!(
                    "sweep noise rate {r} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn run_count(&self) -> usize {
        self.learning_rates.len() * self.weight_decays.len()
            + self.noise_rates.len() * self.method_params.len()
    }
}

/// One sweep run's row in the table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub stage: u8,
    pub lr: f64,
    pub weight_decay: f64,
    pub method_param: f64,
    pub noise_rate: f64,
    pub seed: u64,
    pub peak_val_acc: f64,
    pub final_val_acc: f64,
    pub final_test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// All runs in declared grid order: stage 1 first.
    pub rows: Vec<SweepRow>,
    pub best_lr: f64,
    pub best_wd: f64,
    /// Winning method hyperparameter per stage-2 noise rate.
    pub best_params: Vec<(f64, f64)>,
}

pub const SWEEP_CSV_HEADER: &str =
    "stage,lr,weight_decay,method_param,noise_rate,seed,peak_val_acc,final_val_acc,final_test_acc";

pub fn write_sweep_csv(outcome: &SweepOutcome, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{SWEEP_CSV_HEADER}")?;
    for r in &outcome.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.stage,
            r.lr,
            r.weight_decay,
            r.method_param,
            r.noise_rate,
            r.seed,
            r.peak_val_acc,
            r.final_val_acc,
            r.final_test_acc.map_or_else(|| "nan".to_string(), |x| format!("{x}")),
        )?;
    }
    f.flush()?;
    Ok(())
}

/// The two-stage sweep. Stage 1 selects (lr, wd) by peak validation accuracy
/// at the stage-1 noise setting with the base method hyperparameter fixed;
/// ties prefer the smaller lr, then the smaller wd. Stage 2 grids the method
/// hyperparameter per noise rate at the winner; ties prefer the smaller
/// value. Runs within a stage execute in parallel; rows are assembled in
/// declared grid order regardless of completion order.
pub fn run_sweep(grid: &SweepGrid, base: &ExperimentConfig) -> Result<SweepOutcome> {
    grid.validate()?;
    base.validate()?;
    let LossAssignment::Uniform(base_loss) = &base.assignment else {
        return Err(Error::InvalidParameter(
            "the sweep searches a single uniform loss, not a clean/noisy pair".into(),
        ));
    };
    let base_param = method_param_of(base_loss).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "loss {} has no single method hyperparameter to sweep",
            base_loss.name()
        ))
    })?;

    let run_cell = |lr: f64, wd: f64, param: f64, noise: NoiseSpec, stage: u8| -> Result<SweepRow> {
        let mut c = base.clone();
        c.train.learning_rate = lr;
        c.train.weight_decay = wd;
        c.assignment = LossAssignment::Uniform(with_method_param(base_loss, param)?);
        c.train.views_per_example = c.assignment.views();
        c.noise = noise;
        c.out = None;
        let result = run_experiment(&c)?;
        Ok(SweepRow {
            stage,
            lr,
            weight_decay: wd,
            method_param: param,
            noise_rate: c.noise.rate,
            seed: result.seed,
            peak_val_acc: result.peak_val_acc,
            final_val_acc: result.final_val_acc,
            final_test_acc: result.final_test_acc,
        })
    };

    // Stage 1.
    let stage1_cells: Vec<(f64, f64)> = grid
        .learning_rates
        .iter()
        .flat_map(|&lr| grid.weight_decays.iter().map(move |&wd| (lr, wd)))
        .collect();
    let stage1_rows: Vec<SweepRow> = stage1_cells
        .par_iter()
        .map(|&(lr, wd)| {
            run_cell(lr, wd, base_param, NoiseSpec::symmetric(grid.stage1_rate, 0), 1)
        })
        .collect::<Result<Vec<_>>>()?;
    let best = stage1_rows
        .iter()
        .reduce(|best, row| {
            if row.peak_val_acc > best.peak_val_acc
                || (row.peak_val_acc == best.peak_val_acc
                    && (row.lr < best.lr || (row.lr == best.lr && row.weight_decay < best.weight_decay)))
            {
                row
            } else {
                best
            }
        })
        .expect("stage-1 grid is nonempty");
    let (best_lr, best_wd) = (best.lr, best.weight_decay);

    // Stage 2.
    let stage2_cells: Vec<(f64, f64)> = grid
        .noise_rates
        .iter()
        .flat_map(|&rate| grid.method_params.iter().map(move |&p| (rate, p)))
        .collect();
    let stage2_rows: Vec<SweepRow> = stage2_cells
        .par_iter()
        .map(|&(rate, param)| {
            let mut noise = base.noise.clone();
            noise.rate = rate;
            run_cell(best_lr, best_wd, param, noise, 2)
        })
        .collect::<Result<Vec<_>>>()?;
    let best_params: Vec<(f64, f64)> = grid
        .noise_rates
        .iter()
        .map(|&rate| {
            let winner = stage2_rows
                .iter()
                .filter(|r| r.noise_rate == rate)
                .reduce(|best, row| {
                    if row.peak_val_acc > best.peak_val_acc
                        || (row.peak_val_acc == best.peak_val_acc
                            && row.method_param < best.method_param)
                    {
                        row
                    } else {
                        best
                    }
                })
                .expect("method grid is nonempty");
            (rate, winner.method_param)
        })
        .collect();

    let mut rows = stage1_rows;
    rows.extend(stage2_rows);
    Ok(SweepOutcome { rows, best_lr, best_wd, best_params })
}

/// One comparison-table row: a labeled configuration aggregated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub n_seeds: usize,
    pub mean_final_test_acc: f64,
    pub std_final_test_acc: f64,
    pub mean_peak_val_acc: f64,
}

fn replicate_cell(label: &str, config: &ExperimentConfig, seeds: &[u64]) -> Result<AblationRow> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("ablation needs at least one seed".into()));
    }
    let results: Vec<RunResult> = seeds
        .par_iter()
        .map(|&s| {
            let mut c = config.clone();
            c.train.seed = s;
            c.out = None;
            run_experiment(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<f64> = results
        .iter()
        .map(|r| {
            r.final_test_acc.ok_or_else(|| {
                Error::InvalidParameter("ablation tables need a clean test set".into())
            })
        })
        .collect::<Result<_>>()?;
    let (mean, std) = mean_std(&finals)?;
    let peaks: Vec<f64> = results.iter().map(|r| r.peak_val_acc).collect();
    let (mean_peak, _) = mean_std(&peaks)?;
    Ok(AblationRow {
        label: label.to_string(),
        n_seeds: seeds.len(),
        mean_final_test_acc: mean,
        std_final_test_acc: std,
        mean_peak_val_acc: mean_peak,
    })
}

/// Consistency-term ablation: the label-vs-prediction divergence alone
/// ("js"), the label-vs-mean two-view variant without the consistency term
/// ("js-mean"), and the full objective ("gjs"), all at the base loss's π.
pub fn ablation_no_consistency(
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let pi = match &base.assignment {
        LossAssignment::Uniform(spec) => match spec {
            LossSpec::Js { pi } | LossSpec::Gjs { pi } | LossSpec::JsMeanAblation { pi } => *pi,
            _ => 0.5,
        },
        LossAssignment::PerFlag { .. } => 0.5,
    };
    let variants: [(&str, LossSpec); 3] = [
        ("js", LossSpec::Js { pi }),
        ("js-mean", LossSpec::JsMeanAblation { pi }),
        ("gjs", LossSpec::Gjs { pi }),
    ];
    variants
        .iter()
        .map(|(label, spec)| {
            let mut c = base.clone();
            c.assignment = LossAssignment::Uniform(*spec);
            c.train.views_per_example = c.assignment.views();
            replicate_cell(label, &c, seeds)
        })
        .collect()
}

/// Augmentation-strength ablation: the base objective trained under the
/// full, weak, and identity augmentation ladders.
pub fn ablation_augment_strength(
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    [Strength::Full, Strength::Weak, Strength::None]
        .iter()
        .map(|&strength| {
            let mut c = base.clone();
            c.augment = AugmentChoice::ladder(strength);
            replicate_cell(strength.name(), &c, seeds)
        })
        .collect()
}

/// One mixed-loss table cell: mean/std of final test accuracy at a π.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedCell {
    pub pi: f64,
    pub mean_final_test_acc: f64,
    pub std_final_test_acc: f64,
}

/// One mixed-loss table row: a (clean loss, noisy loss) pair across π values.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedRow {
    pub clean: &'static str,
    pub noisy: &'static str,
    pub cells: Vec<MixedCell>,
}

/// Clean/noisy loss-dispatch table: the four JS/GJS pairings, each trained
/// per π value, aggregated over seeds.
pub fn ablation_mixed_loss(
    base: &ExperimentConfig,
    pis: &[f64],
    seeds: &[u64],
) -> Result<Vec<MixedRow>> {
    if pis.is_empty() {
        return Err(Error::InvalidParameter("mixed-loss table needs at least one pi".into()));
    }
    let pairs: [(&'static str, &'static str); 4] =
        [("js", "js"), ("gjs", "js"), ("js", "gjs"), ("gjs", "gjs")];
    let make = |name: &str, pi: f64| -> LossSpec {
        if name == "js" {
            LossSpec::Js { pi }
        } else {
            LossSpec::Gjs { pi }
        }
    };
    pairs
        .iter()
        .map(|&(clean, noisy)| {
            let cells = pis
                .iter()
                .map(|&pi| {
                    let mut c = base.clone();
                    c.assignment = LossAssignment::PerFlag {
                        clean: make(clean, pi),
                        noisy: make(noisy, pi),
                    };
                    c.train.views_per_example = c.assignment.views();
                    let row = replicate_cell("", &c, seeds)?;
                    Ok(MixedCell {
                        pi,
                        mean_final_test_acc: row.mean_final_test_acc,
                        std_final_test_acc: row.std_final_test_acc,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MixedRow { clean, noisy, cells })
        })
        .collect()
}
