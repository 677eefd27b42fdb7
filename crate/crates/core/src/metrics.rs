//! Prediction-consistency and accuracy measurements, with clean/noisy-subset
//! breakdowns, plus the per-epoch metrics record and its CSV form.
//!
//! Consistency compares the argmax prediction on an example against the
//! prediction on one augmented view. Each example's view is drawn from a
//! generator keyed by (measurement seed, content hash of its features), so a
//! manually filtered subset reproduces exactly the draws it would have
//! received inside the full set — the subset/overall recombination identity
//! is then exact counting.

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::augment::{augment, AugmentSpec};
use crate::model::MlpParams;
use crate::noise::NoisyDataset;
use crate::seeding::{child_seed, feature_hash, rng};
use crate::{Error, Result};

/// Which label column an accuracy is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelField {
    Observed,
    True,
}

struct PerExample {
    pred: usize,
    view_pred: usize,
}

fn per_example_eval(
    params: &MlpParams,
    dataset: &NoisyDataset,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<Vec<PerExample>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset
        .examples
        .iter()
        .map(|e| {
            let pred = params.predict_class(&e.features)?;
            let mut r = rng(child_seed(seed, feature_hash(&e.features)));
            let view = augment(&e.features, spec, &mut r);
            let view_pred = params.predict_class(&view)?;
            Ok(PerExample { pred, view_pred })
        })
        .collect()
}

/// Fraction of examples whose argmax prediction survives one augmented view.
/// Label-free; deterministic in the seed.
pub fn consistency(
    params: &MlpParams,
    dataset: &NoisyDataset,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<f64> {
    let evals = per_example_eval(params, dataset, spec, seed)?;
    let matches = evals.iter().filter(|e| e.pred == e.view_pred).count();
    Ok(matches as f64 / evals.len() as f64)
}

/// Consistency restricted to the clean and noisy subsets; an empty subset
/// yields `None`.
pub fn subset_consistency(
    params: &MlpParams,
    dataset: &NoisyDataset,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<(Option<f64>, Option<f64>)> {
    let evals = per_example_eval(params, dataset, spec, seed)?;
    let mut clean = (0usize, 0usize);
    let mut noisy = (0usize, 0usize);
    for (e, eval) in dataset.examples.iter().zip(&evals) {
        let slot = if e.is_noisy { &mut noisy } else { &mut clean };
        slot.0 += 1;
        if eval.pred == eval.view_pred {
            slot.1 += 1;
        }
    }
    let frac = |(n, m): (usize, usize)| if n == 0 { None } else { Some(m as f64 / n as f64) };
    Ok((frac(clean), frac(noisy)))
}

/// Fraction of argmax predictions matching the chosen label field.
pub fn accuracy(params: &MlpParams, dataset: &NoisyDataset, field: LabelField) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for e in &dataset.examples {
        let label = match field {
            LabelField::Observed => e.observed_label,
            LabelField::True => e.true_label,
        };
        if params.predict_class(&e.features)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Accuracy w.r.t. observed labels on the clean and noisy subsets; an empty
/// subset yields `None`. On the noisy subset this measures memorization of
/// the wrong labels.
pub fn subset_accuracy(
    params: &MlpParams,
    dataset: &NoisyDataset,
) -> Result<(Option<f64>, Option<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut clean = (0usize, 0usize);
    let mut noisy = (0usize, 0usize);
    for e in &dataset.examples {
        let slot = if e.is_noisy { &mut noisy } else { &mut clean };
        slot.0 += 1;
        if params.predict_class(&e.features)? == e.observed_label {
            slot.1 += 1;
        }
    }
    let frac = |(n, m): (usize, usize)| if n == 0 { None } else { Some(m as f64 / n as f64) };
    Ok((frac(clean), frac(noisy)))
}

/// Everything the per-epoch record needs from the training set, computed in
/// one sweep so the overall and subset consistencies share their draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetReport {
    pub cons_all: f64,
    pub cons_clean: Option<f64>,
    pub cons_noisy: Option<f64>,
    pub acc_clean: Option<f64>,
    pub acc_noisy: Option<f64>,
}

pub fn train_set_report(
    params: &MlpParams,
    dataset: &NoisyDataset,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<TrainSetReport> {
    let evals = per_example_eval(params, dataset, spec, seed)?;
    let mut cons = [(0usize, 0usize); 2]; // [clean, noisy]
    let mut acc = [(0usize, 0usize); 2];
    let mut all_matches = 0usize;
    for (e, eval) in dataset.examples.iter().zip(&evals) {
        let g = e.is_noisy as usize;
        cons[g].0 += 1;
        acc[g].0 += 1;
        if eval.pred == eval.view_pred {
            cons[g].1 += 1;
            all_matches += 1;
        }
        if eval.pred == e.observed_label {
            acc[g].1 += 1;
        }
    }
    let frac = |(n, m): (usize, usize)| if n == 0 { None } else { Some(m as f64 / n as f64) };
    Ok(TrainSetReport {
        cons_all: all_matches as f64 / evals.len() as f64,
        cons_clean: frac(cons[0]),
        cons_noisy: frac(cons[1]),
        acc_clean: frac(acc[0]),
        acc_noisy: frac(acc[1]),
    })
}

/// One metrics row, recorded every stride epochs during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
    pub cons_all: f64,
    pub cons_clean: Option<f64>,
    pub cons_noisy: Option<f64>,
    pub train_acc_clean: Option<f64>,
    pub train_acc_noisy: Option<f64>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,loss,val_acc,test_acc,cons_all,cons_clean,cons_noisy,train_acc_clean,train_acc_noisy";

    pub fn validate(&self) -> Result<()> {
        if self.epoch == 0 {
            return Err(Error::InvalidParameter("metrics epoch is 1-based".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.lr)));
        }
        let fractions = [
            ("val_acc", Some(self.val_acc)),
            ("test_acc", self.test_acc),
            ("cons_all", Some(self.cons_all)),
            ("cons_clean", self.cons_clean),
            ("cons_noisy", self.cons_noisy),
            ("train_acc_clean", self.train_acc_clean),
            ("train_acc_noisy", self.train_acc_noisy),
        ];
        for (name, v) in fractions {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!(
                        "{name} = {v}, outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "nan".to_string(), |x| format!("{x}"))
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss,
            self.val_acc,
            opt(self.test_acc),
            self.cons_all,
            opt(self.cons_clean),
            opt(self.cons_noisy),
            opt(self.train_acc_clean),
            opt(self.train_acc_noisy),
        )
    }

    pub fn from_csv_line(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let req = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad value {:?}: {e}", fields[i]),
            })
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if fields[i] == "nan" {
                Ok(None)
            } else {
                req(i).map(Some)
            }
        };
        let record = Self {
            epoch: fields[0].parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad epoch: {e}"),
            })?,
            lr: req(1)?,
            loss: req(2)?,
            val_acc: req(3)?,
            test_acc: opt(4)?,
            cons_all: req(5)?,
            cons_clean: opt(6)?,
            cons_noisy: opt(7)?,
            train_acc_clean: opt(8)?,
            train_acc_noisy: opt(9)?,
        };
        record.validate().map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        Ok(record)
    }
}

/// Read a metrics CSV (header plus records), reporting parse failures with
/// their line numbers.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if lineno == 1 {
            if line != MetricsRecord::CSV_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        records.push(MetricsRecord::from_csv_line(&line, lineno)?);
    }
    Ok(records)
}
