//! Experiment configuration: a flat `key = value` file format (with `#`
//! comments), CLI-override merging where flags win, and construction of the
//! fully validated [`ExperimentConfig`] every run mode consumes.
//!
//! Unknown keys are rejected by name, as are malformed values, so a typo in
//! a config file fails fast instead of silently running the wrong
//! experiment.

use std::path::{Path, PathBuf};

use crate::augment::{AugmentSpec, Strength};
use crate::data::SyntheticSpec;
use crate::loss::{default_sce_a, LossSpec};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::train::{LossAssignment, TrainConfig};
use crate::{Error, Result};

/// Every key the config format accepts.
pub const KNOWN_KEYS: &[&str] = &[
    // dataset
    "dataset_path",
    "classes",
    "per_class",
    "dim",
    "separation",
    "sigma",
    "data_seed",
    // noise (the injection seed is derived from the run seed)
    "noise_kind",
    "noise_rate",
    "class_map",
    "groups",
    // loss
    "loss",
    "clean_loss",
    "noisy_loss",
    "pi",
    "gce_q",
    "sce_alpha",
    "sce_beta",
    "sce_a",
    "bs_beta",
    "ls_epsilon",
    // training
    "lr",
    "weight_decay",
    "momentum",
    "epochs",
    "batch_size",
    "milestones",
    "lr_decay_factor",
    "seed",
    "force_identical_views",
    // augmentation
    "augment",
    "augment_jitter",
    "augment_scale_lo",
    "augment_scale_hi",
    // evaluation and output
    "validation_fraction",
    "metrics_stride",
    "test_per_class",
    "out",
];

/// One parsed `key = value` entry; line 0 marks a CLI override.
pub type Entry = (String, String, usize);

/// Parse config text into ordered entries. Blank lines and `#` comments are
/// skipped; duplicate and unknown keys are errors naming the key and line.
pub fn parse_kv_text(text: &str) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {lineno}: expected `key = value`, got {line:?}"
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {lineno}: unknown key `{key}`")));
        }
        if entries.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::Config(format!("line {lineno}: duplicate key `{key}`")));
        }
        entries.push((key, value, lineno));
    }
    Ok(entries)
}

/// Overlay CLI overrides (flags win over file entries).
pub fn merge_overrides(mut base: Vec<Entry>, overrides: &[(String, String)]) -> Result<Vec<Entry>> {
    for (key, value) in overrides {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        if let Some(slot) = base.iter_mut().find(|(k, _, _)| k == key) {
            slot.1 = value.clone();
            slot.2 = 0;
        } else {
            base.push((key.clone(), value.clone(), 0));
        }
    }
    Ok(base)
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
}

/// Augmentation strength keyword plus optional numeric overrides, resolved
/// into a concrete [`AugmentSpec`] once the training set's feature scale is
/// known.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentChoice {
    pub strength: Strength,
    pub jitter: Option<f64>,
    pub scale: Option<(f64, f64)>,
}

impl AugmentChoice {
    pub fn ladder(strength: Strength) -> Self {
        Self { strength, jitter: None, scale: None }
    }

    pub fn resolve(&self, feature_std: f64) -> Result<AugmentSpec> {
        let mut spec = AugmentSpec::from_strength(self.strength, feature_std)?;
        if let Some(j) = self.jitter {
            spec.jitter_sigma = j;
        }
        if let Some(s) = self.scale {
            spec.scale_range = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A fully validated experiment description. The run seed lives in
/// `train.seed`; noise-injection and split seeds are derived from it, while
/// `data_seed` pins the dataset itself independently of the run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub data_seed: u64,
    /// Noise template; the `seed` field is overwritten per run.
    pub noise: NoiseSpec,
    pub assignment: LossAssignment,
    pub train: TrainConfig,
    pub augment: AugmentChoice,
    pub validation_fraction: f64,
    pub metrics_stride: usize,
    /// Per-class size of the synthetic clean test set (0 disables it; CSV
    /// datasets never have one).
    pub test_per_class: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_entries(&[]).expect("empty config is valid")
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| {
        let at = if line == 0 { String::new() } else { format!(" (line {line})") };
        Error::Config(format!("key `{key}`{at}: bad value {value:?}: {e}"))
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`{}: expected true or false, got {value:?}",
            if line == 0 { String::new() } else { format!(" (line {line})") }
        ))),
    }
}

/// Parse a `from:to` class-map list such as `"9:1, 5:3"`.
pub fn parse_class_map(value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("key `class_map`: expected `from:to`, got {pair:?}")))?;
            Ok((
                parse_as::<usize>("class_map", a.trim(), 0)?,
                parse_as::<usize>("class_map", b.trim(), 0)?,
            ))
        })
        .collect()
}

/// Parse semicolon-separated cycle groups such as `"0,1,2; 3,4"`.
pub fn parse_groups(value: &str) -> Result<Vec<Vec<usize>>> {
    value
        .split(';')
        .map(|group| {
            group
                .split(',')
                .map(|c| parse_as::<usize>("groups", c.trim(), 0))
                .collect()
        })
        .collect()
}

fn loss_from_keyword(key: &str, kw: &str, p: &LossParams) -> Result<LossSpec> {
    let spec = match kw {
        "ce" => LossSpec::CrossEntropy,
        "js" => LossSpec::Js { pi: p.pi },
        "gjs" => LossSpec::Gjs { pi: p.pi },
        "js-mean" => LossSpec::JsMeanAblation { pi: p.pi },
        "gce" => LossSpec::Gce { q: p.gce_q },
        "sce" => LossSpec::Sce { alpha: p.sce_alpha, beta: p.sce_beta, a: p.sce_a },
        "bs" => LossSpec::BootstrapSoft { beta: p.bs_beta },
        "ls" => LossSpec::LabelSmoothing { epsilon: p.ls_epsilon },
        _ => {
            return Err(Error::Config(format!(
                "key `{key}`: unknown loss {kw:?} (expected ce, js, gjs, js-mean, gce, sce, bs, or ls)"
            )))
        }
    };
    Ok(spec)
}

struct LossParams {
    pi: f64,
    gce_q: f64,
    sce_alpha: f64,
    sce_beta: f64,
    sce_a: f64,
    bs_beta: f64,
    ls_epsilon: f64,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_entries(&parse_kv_text(&text)?)
    }

    /// Build and validate from merged entries; unset keys take defaults.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let find = |key: &str| entries.iter().find(|(k, _, _)| k == key);
        let get = |key: &str| find(key).map(|(_, v, l)| (v.as_str(), *l));

        // Dataset.
        let dataset = if let Some((path, _)) = get("dataset_path") {
            for k in ["classes", "per_class", "dim", "separation", "sigma", "data_seed"] {
                if get(k).is_some() {
                    return Err(Error::Config(format!(
                        "key `{k}` conflicts with `dataset_path` (the CSV fixes the dataset)"
                    )));
                }
            }
            DatasetSource::Csv(PathBuf::from(path))
        } else {
            let mut spec = SyntheticSpec::default();
            if let Some((v, l)) = get("classes") {
                spec.k = parse_as("classes", v, l)?;
            }
            if let Some((v, l)) = get("per_class") {
                spec.n_per_class = parse_as("per_class", v, l)?;
            }
            if let Some((v, l)) = get("dim") {
                spec.dim = parse_as("dim", v, l)?;
            }
            if let Some((v, l)) = get("separation") {
                spec.separation = parse_as("separation", v, l)?;
            }
            if let Some((v, l)) = get("sigma") {
                spec.sigma = parse_as("sigma", v, l)?;
            }
            spec.validate()?;
            DatasetSource::Synthetic(spec)
        };
        let data_seed = match get("data_seed") {
            Some((v, l)) => parse_as("data_seed", v, l)?,
            None => 0,
        };

        // Noise.
        let kind = match get("noise_kind") {
            None => NoiseKind::Symmetric,
            Some(("symmetric", _)) => NoiseKind::Symmetric,
            Some(("asymmetric-map", _)) => NoiseKind::AsymmetricMap,
            Some(("asymmetric-cycle", _)) => NoiseKind::AsymmetricCycle,
            Some((other, _)) => {
                return Err(Error::Config(format!(
                    "key `noise_kind`: unknown kind {other:?} (expected symmetric, asymmetric-map, or asymmetric-cycle)"
                )))
            }
        };
        let rate = match get("noise_rate") {
            Some((v, l)) => parse_as("noise_rate", v, l)?,
            None => 0.0,
        };
        let class_map = match get("class_map") {
            Some((v, _)) => {
                if kind != NoiseKind::AsymmetricMap {
                    return Err(Error::Config(
                        "key `class_map` requires noise_kind = asymmetric-map".into(),
                    ));
                }
                parse_class_map(v)?
            }
            None => Vec::new(),
        };
        let groups = match get("groups") {
            Some((v, _)) => {
                if kind != NoiseKind::AsymmetricCycle {
                    return Err(Error::Config(
                        "key `groups` requires noise_kind = asymmetric-cycle".into(),
                    ));
                }
                parse_groups(v)?
            }
            None => Vec::new(),
        };
        let noise = NoiseSpec { kind, rate, class_map, groups, seed: 0 };

        // Loss.
        let mut lp = LossParams {
            pi: 0.5,
            gce_q: 0.7,
            sce_alpha: 0.1,
            sce_beta: 1.0,
            sce_a: default_sce_a(),
            bs_beta: 0.95,
            ls_epsilon: 0.1,
        };
        if let Some((v, l)) = get("pi") {
            lp.pi = parse_as("pi", v, l)?;
        }
        if let Some((v, l)) = get("gce_q") {
            lp.gce_q = parse_as("gce_q", v, l)?;
        }
        if let Some((v, l)) = get("sce_alpha") {
            lp.sce_alpha = parse_as("sce_alpha", v, l)?;
        }
        if let Some((v, l)) = get("sce_beta") {
            lp.sce_beta = parse_as("sce_beta", v, l)?;
        }
        if let Some((v, l)) = get("sce_a") {
            lp.sce_a = parse_as("sce_a", v, l)?;
        }
        if let Some((v, l)) = get("bs_beta") {
            lp.bs_beta = parse_as("bs_beta", v, l)?;
        }
        if let Some((v, l)) = get("ls_epsilon") {
            lp.ls_epsilon = parse_as("ls_epsilon", v, l)?;
        }
        let assignment = match (get("loss"), get("clean_loss"), get("noisy_loss")) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(Error::Config(
                    "key `loss` conflicts with `clean_loss`/`noisy_loss`".into(),
                ))
            }
            (None, Some((c, _)), Some((n, _))) => LossAssignment::PerFlag {
                clean: loss_from_keyword("clean_loss", c, &lp)?,
                noisy: loss_from_keyword("noisy_loss", n, &lp)?,
            },
            (None, Some(_), None) | (None, None, Some(_)) => {
                return Err(Error::Config(
                    "keys `clean_loss` and `noisy_loss` must be set together".into(),
                ))
            }
            (loss, None, None) => {
                let kw = loss.map_or("ce", |(v, _)| v);
                LossAssignment::Uniform(loss_from_keyword("loss", kw, &lp)?)
            }
        };
        assignment.validate()?;

        // Training.
        let mut train = TrainConfig::default();
        if let Some((v, l)) = get("lr") {
            train.learning_rate = parse_as("lr", v, l)?;
        }
        if let Some((v, l)) = get("weight_decay") {
            train.weight_decay = parse_as("weight_decay", v, l)?;
        }
        if let Some((v, l)) = get("momentum") {
            train.momentum = parse_as("momentum", v, l)?;
        }
        if let Some((v, l)) = get("epochs") {
            train.epochs = parse_as("epochs", v, l)?;
        }
        if let Some((v, l)) = get("batch_size") {
            train.batch_size = parse_as("batch_size", v, l)?;
        }
        if let Some((v, l)) = get("milestones") {
            train.milestones = if v.is_empty() {
                Vec::new()
            } else {
                v.split(',')
                    .map(|m| parse_as("milestones", m.trim(), l))
                    .collect::<Result<_>>()?
            };
        }
        if let Some((v, l)) = get("lr_decay_factor") {
            train.lr_decay_factor = parse_as("lr_decay_factor", v, l)?;
        }
        if let Some((v, l)) = get("seed") {
            train.seed = parse_as("seed", v, l)?;
        }
        if let Some((v, l)) = get("force_identical_views") {
            train.force_identical_views = parse_bool("force_identical_views", v, l)?;
        }
        train.views_per_example = assignment.views();
        train.validate()?;

        // Augmentation.
        let strength = match get("augment") {
            None => Strength::Full,
            Some(("none", _)) => Strength::None,
            Some(("weak", _)) => Strength::Weak,
            Some(("full", _)) => Strength::Full,
            Some((other, _)) => {
                return Err(Error::Config(format!(
                    "key `augment`: unknown strength {other:?} (expected none, weak, or full)"
                )))
            }
        };
        let jitter = match get("augment_jitter") {
            Some((v, l)) => Some(parse_as("augment_jitter", v, l)?),
            None => None,
        };
        let scale = match (get("augment_scale_lo"), get("augment_scale_hi")) {
            (Some((lo, l1)), Some((hi, l2))) => Some((
                parse_as("augment_scale_lo", lo, l1)?,
                parse_as("augment_scale_hi", hi, l2)?,
            )),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "keys `augment_scale_lo` and `augment_scale_hi` must be set together".into(),
                ))
            }
        };
        if strength == Strength::None && (jitter.is_some() || scale.is_some()) {
            return Err(Error::Config(
                "augment overrides have no effect with augment = none".into(),
            ));
        }
        let augment = AugmentChoice { strength, jitter, scale };

        // Evaluation and output.
        let validation_fraction = match get("validation_fraction") {
            Some((v, l)) => parse_as("validation_fraction", v, l)?,
            None => 0.1,
        };
        let metrics_stride = match get("metrics_stride") {
            Some((v, l)) => parse_as("metrics_stride", v, l)?,
            None => 1,
        };
        let test_per_class = match get("test_per_class") {
            Some((v, l)) => parse_as("test_per_class", v, l)?,
            None => 200,
        };
        let out = get("out").map(|(v, _)| PathBuf::from(v));

        let config = Self {
            dataset,
            data_seed,
            noise,
            assignment,
            train,
            augment,
            validation_fraction,
            metrics_stride,
            test_per_class,
            out,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        if !self.noise.rate.is_finite() || !(0.0..=1.0).contains(&self.noise.rate) {
            return Err(Error::Config(format!(
                "key `noise_rate`: {} is outside [0, 1]",
                self.noise.rate
            )));
        }
        self.assignment.validate()?;
        self.train.validate()?;
        if self.train.views_per_example != self.assignment.views() {
            return Err(Error::Config(format!(
                "views_per_example = {} but the loss assignment needs {}",
                self.train.views_per_example,
                self.assignment.views()
            )));
        }
        if !self.validation_fraction.is_finite()
            || !(0.0 < self.validation_fraction && self.validation_fraction < 1.0)
        {
            return Err(Error::Config(format!(
                "key `validation_fraction`: {} is outside (0, 1)",
                self.validation_fraction
            )));
        }
        if self.metrics_stride == 0 {
            return Err(Error::Config("key `metrics_stride`: must be >= 1".into()));
        }
        if !self.train.epochs.is_multiple_of(self.metrics_stride) {
            return Err(Error::Config(format!(
                "key `metrics_stride`: {} does not divide epochs = {}",
                self.metrics_stride, self.train.epochs
            )));
        }
        Ok(())
    }
}
