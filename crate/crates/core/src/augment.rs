//! Stochastic feature perturbations that produce the multiple views the
//! consistency losses consume: a multiplicative scale draw plus per-coordinate
//! Gaussian jitter, at three strength levels.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Strength ladder for the default perturbation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    None,
    Weak,
    Full,
}

impl Strength {
    pub fn name(&self) -> &'static str {
        match self {
            Strength::None => "none",
            Strength::Weak => "weak",
            Strength::Full => "full",
        }
    }
}

/// Perturbation parameters: x' = s·x + ε with s ~ U(lo, hi) drawn once per
/// call and ε ~ N(0, jitter_sigma²) per coordinate.
///
/// The jitter std is in feature units; the [`weak`](AugmentSpec::weak) and
/// [`full`](AugmentSpec::full) constructors scale it by a caller-supplied
/// typical feature std so strength is relative to the data.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub strength: Strength,
    pub jitter_sigma: f64,
    pub scale_range: (f64, f64),
}

impl AugmentSpec {
    pub fn new(strength: Strength, jitter_sigma: f64, scale_range: (f64, f64)) -> Result<Self> {
        let spec = Self { strength, jitter_sigma, scale_range };
        spec.validate()?;
        Ok(spec)
    }

    /// Identity: no scale, no jitter, no generator draws.
    pub fn none() -> Self {
        Self { strength: Strength::None, jitter_sigma: 0.0, scale_range: (1.0, 1.0) }
    }

    /// Jitter σ = 0.05·feature_std, scale U(0.95, 1.05).
    pub fn weak(feature_std: f64) -> Result<Self> {
        Self::new(Strength::Weak, 0.05 * feature_std, (0.95, 1.05))
    }

    /// Jitter σ = 0.15·feature_std, scale U(0.8, 1.2).
    pub fn full(feature_std: f64) -> Result<Self> {
        Self::new(Strength::Full, 0.15 * feature_std, (0.8, 1.2))
    }

    /// Ladder constructor used by config parsing.
    pub fn from_strength(strength: Strength, feature_std: f64) -> Result<Self> {
        match strength {
            Strength::None => Ok(Self::none()),
            Strength::Weak => Self::weak(feature_std),
            Strength::Full => Self::full(feature_std),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.jitter_sigma.is_finite() || self.jitter_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "jitter sigma {} must be a finite nonnegative value",
                self.jitter_sigma
            )));
        }
        let (lo, hi) = self.scale_range;
        if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || lo > hi {
            return Err(Error::InvalidParameter(format!(
                "scale range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }
}

/// One perturbed copy of `x`. Strength `None` returns `x` unchanged without
/// touching the generator; a degenerate scale range (lo == hi) and zero
/// jitter likewise skip their draws, so the generator stream depends only on
/// the draws actually needed.
pub fn augment<R: Rng>(x: &[f64], spec: &AugmentSpec, rng: &mut R) -> Vec<f64> {
    if spec.strength == Strength::None {
        return x.to_vec();
    }
    let (lo, hi) = spec.scale_range;
    let s = if lo == hi { lo } else { rng.random_range(lo..hi) };
    let mut out: Vec<f64> = x.iter().map(|&v| s * v).collect();
    if spec.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.jitter_sigma).expect("validated sigma");
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    out
}

/// M independent perturbed copies of `x`, drawn in order.
pub fn sample_views<R: Rng>(
    x: &[f64],
    spec: &AugmentSpec,
    rng: &mut R,
    m: usize,
) -> Result<Vec<Vec<f64>>> {
    if m < 1 {
        return Err(Error::InvalidParameter("need at least one view".into()));
    }
    Ok((0..m).map(|_| augment(x, spec, rng)).collect())
}
