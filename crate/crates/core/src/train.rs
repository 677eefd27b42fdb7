//! The training loop: seeded minibatch SGD epochs with per-example view
//! augmentation, the step learning-rate schedule, and per-example loss
//! dispatch for clean/noisy mixed objectives.

use rand::seq::SliceRandom;

use crate::augment::{augment, sample_views, AugmentSpec};
use crate::divergence::ProbDist;
use crate::loss::LossSpec;
use crate::model::{backward_into, MlpParams};
use crate::noise::NoisyDataset;
use crate::optim::{sgd_nesterov_step, OptimizerState};
use crate::seeding::{child_seed, rng, tag};
use crate::{Error, Result};

/// Optimizer and schedule hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Schedule milestones as fractions of total epochs; the learning rate
    /// is multiplied by `lr_decay_factor` at each.
    pub milestones: Vec<f64>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    /// Augmented views drawn per example: 2 for the two-view losses.
    pub views_per_example: usize,
    /// Diagnostic mode: draw one augmentation and feed it to both views, so
    /// a two-view loss sees identical predictions while consuming the same
    /// generator stream as a one-view run.
    pub force_identical_views: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 1e-4,
            momentum: 0.9,
            epochs: 150,
            batch_size: 128,
            milestones: vec![0.5, 0.75],
            lr_decay_factor: 0.1,
            seed: 0,
            views_per_example: 1,
            force_identical_views: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // Zero is allowed (a no-op run is a useful diagnostic); the sweep
        // grids only ever contain positive rates.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weight decay {}",
                self.weight_decay
            )));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum {}, outside [0, 1)",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        let mut prev = 0.0;
        for &m in &self.milestones {
            if !m.is_finite() || m <= prev || m >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "milestones must be strictly increasing within (0, 1), got {:?}",
                    self.milestones
                )));
            }
            prev = m;
        }
        if !self.lr_decay_factor.is_finite() || self.lr_decay_factor <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lr decay factor {}",
                self.lr_decay_factor
            )));
        }
        if self.views_per_example == 0 {
            return Err(Error::InvalidParameter("views per example must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which loss each example trains under: one loss for everybody, or a
/// clean/noisy pair dispatched on the example's noise flag.
#[derive(Debug, Clone, PartialEq)]
pub enum LossAssignment {
    Uniform(LossSpec),
    PerFlag { clean: LossSpec, noisy: LossSpec },
}

impl LossAssignment {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossAssignment::Uniform(s) => s.validate(),
            LossAssignment::PerFlag { clean, noisy } => {
                clean.validate()?;
                noisy.validate()
            }
        }
    }

    /// Views to draw per example: the maximum arity across the losses in
    /// play, so the augmentation stream does not depend on any flag.
    pub fn views(&self) -> usize {
        match self {
            LossAssignment::Uniform(s) => s.views(),
            LossAssignment::PerFlag { clean, noisy } => clean.views().max(noisy.views()),
        }
    }
}

/// Learning rate in force at a 0-based epoch: base rate times
/// decay_factor^(milestones passed), a milestone at floor(fraction·epochs)
/// counting as passed once epoch reaches it.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::InvalidParameter(format!(
            "epoch {epoch} out of range for {} total",
            config.epochs
        )));
    }
    let mut lr = config.learning_rate;
    for &frac in &config.milestones {
        let at = (frac * config.epochs as f64).floor() as usize;
        if epoch >= at {
            lr *= config.lr_decay_factor;
        }
    }
    Ok(lr)
}

/// One pass over the dataset in seeded-shuffled minibatches. Per example:
/// draw the views, evaluate the assigned loss on the observed label, and
/// accumulate the example's summed-view gradient; per batch: average and
/// take one optimizer step at this epoch's learning rate. Returns the mean
/// per-example loss.
pub fn train_epoch(
    params: &mut MlpParams,
    state: &mut OptimizerState,
    dataset: &NoisyDataset,
    augment_spec: &AugmentSpec,
    assignment: &LossAssignment,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    config.validate()?;
    assignment.validate()?;
    augment_spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let views_needed = assignment.views();
    if config.views_per_example != views_needed {
        return Err(Error::Config(format!(
            "views_per_example = {} but the loss assignment needs {}",
            config.views_per_example, views_needed
        )));
    }
    let k = dataset.n_classes;
    if params.output_dim() != k {
        return Err(Error::DimensionMismatch(format!(
            "model emits {} logits for {} classes",
            params.output_dim(),
            k
        )));
    }
    if params.input_dim() != dataset.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model takes {}-dim input, dataset has {}",
            params.input_dim(),
            dataset.dim()
        )));
    }
    let lr = lr_at_epoch(config, epoch)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = rng(child_seed(child_seed(config.seed, tag::SHUFFLE), epoch as u64));
    order.shuffle(&mut shuffle_rng);
    let mut aug_rng = rng(child_seed(child_seed(config.seed, tag::AUGMENT), epoch as u64));

    let mut batch_grads = params.zero_grads();
    let mut example_grads = params.zero_grads();
    let mut loss_sum = 0.0;

    for chunk in order.chunks(config.batch_size) {
        batch_grads.zero();
        for &i in chunk {
            let e = &dataset.examples[i];
            let drawn: Vec<Vec<f64>> =
                if config.force_identical_views && views_needed == 2 {
                    vec![augment(&e.features, augment_spec, &mut aug_rng)]
                } else {
                    sample_views(&e.features, augment_spec, &mut aug_rng, views_needed)?
                };
            let spec = match assignment {
                LossAssignment::Uniform(s) => s,
                LossAssignment::PerFlag { clean, noisy } => {
                    if e.is_noisy {
                        noisy
                    } else {
                        clean
                    }
                }
            };
            let arity = spec.views();
            let view_refs: Vec<&[f64]> = if arity > drawn.len() {
                // Only reachable in forced-identical mode: both views read
                // the single draw.
                vec![drawn[0].as_slice(); arity]
            } else {
                drawn[..arity].iter().map(|v| v.as_slice()).collect()
            };
            let y = ProbDist::onehot(k, e.observed_label)?;
            example_grads.zero();
            let value = backward_into(params, &view_refs, &y, spec, &mut example_grads)?;
            batch_grads.add_assign(&example_grads);
            loss_sum += value;
        }
        batch_grads.scale(1.0 / chunk.len() as f64);
        sgd_nesterov_step(params, &batch_grads, state, lr, config.momentum, config.weight_decay)?;
    }
    Ok(loss_sum / dataset.len() as f64)
}
