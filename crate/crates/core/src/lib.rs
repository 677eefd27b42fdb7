//! Jensen-Shannon consistency losses for learning with noisy labels.
//!
//! The crate is organized around a small set of building blocks:
//!
//! - [`divergence`]: entropy, KL, and weighted Jensen-Shannon divergence on
//!   points of the probability simplex.
//! - [`loss`]: loss functions over logits (CE, JS, GJS, and baselines), each
//!   returning a value together with its analytic gradient.
//! - [`model`] / [`optim`] / [`train`]: a minimal MLP, SGD with Nesterov
//!   momentum, and a deterministic seeded training loop.
//! - [`noise`]: label-transition matrices and noise injection with
//!   ground-truth bookkeeping.
//! - [`augment`]: stochastic feature perturbations producing the views the
//!   consistency losses consume.
//! - [`metrics`]: accuracy and the prediction-consistency measure, with
//!   clean/noisy-subset breakdowns.
//! - [`harness`] / [`config`] / [`stats`]: experiment orchestration, the
//!   `key = value` config format, and Welch's t-test for seed replicates.

pub mod augment;
pub mod config;
pub mod data;
pub mod divergence;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optim;
pub mod seeding;
pub mod stats;
pub mod train;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
