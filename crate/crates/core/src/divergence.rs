//! Entropy, KL, and weighted (generalized) Jensen-Shannon divergence.
//!
//! All values are in nats. Probabilities inside a logarithm or a KL
//! denominator are clamped to [`PROB_FLOOR`] so that onehot labels keep
//! values and gradients finite; the convention 0·log 0 = 0 applies.

use crate::{Error, Result};

/// Absolute tolerance for the simplex-sum check at construction.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance for mixture-weight sums.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Floor applied to probabilities inside logs and KL denominators.
pub const PROB_FLOOR: f64 = 1e-12;

/// A point on the K-simplex: entries in [0, 1] summing to 1.
///
/// Construction renormalizes inputs whose sum is within [`SIMPLEX_TOL`] of 1
/// and rejects anything further off, so upstream bugs surface instead of
/// being hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidDistribution(format!(
                    "entry {i} is {p}, outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, outside 1 ± {SIMPLEX_TOL}"
            )));
        }
        let mut probs = probs;
        if sum != 1.0 {
            for p in &mut probs {
                *p /= sum;
            }
        }
        Ok(Self { probs })
    }

    /// Degenerate distribution putting all mass on `class`.
    pub fn onehot(k: usize, class: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        if class >= k {
            return Err(Error::InvalidDistribution(format!(
                "class {class} out of range for K = {k}"
            )));
        }
        let mut probs = vec![0.0; k];
        probs[class] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// The class index if this distribution is (numerically) onehot.
    pub fn as_onehot(&self) -> Option<usize> {
        let mut hot = None;
        for (i, &p) in self.probs.iter().enumerate() {
            if (p - 1.0).abs() <= SIMPLEX_TOL {
                if hot.is_some() {
                    return None;
                }
                hot = Some(i);
            } else if p > SIMPLEX_TOL {
                return None;
            }
        }
        hot
    }
}

/// Mixture weights: M entries strictly inside (0, 1) summing to 1.
///
/// The two-distribution case is (π, 1−π). Endpoint values 0 and 1 are
/// excluded; the scale factor −(1−π)log(1−π) degenerates there.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    weights: Vec<f64>,
}

impl MixtureWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 mixture weights, got {}",
                weights.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 || w >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "weight {i} is {w}, outside (0, 1)"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {sum}, outside 1 ± {WEIGHT_TOL}"
            )));
        }
        let mut weights = weights;
        if sum != 1.0 {
            for w in &mut weights {
                *w /= sum;
            }
        }
        Ok(Self { weights })
    }

    /// The (π, 1−π) pair.
    pub fn two(pi: f64) -> Result<Self> {
        check_pi(pi)?;
        Ok(Self {
            weights: vec![pi, 1.0 - pi],
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Reject π outside the open interval (0, 1).
pub fn check_pi(pi: f64) -> Result<()> {
    if !pi.is_finite() || pi <= 0.0 || pi >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "pi is {pi}, outside (0, 1)"
        )));
    }
    Ok(())
}

/// Shannon entropy −Σ p log p in nats; 0·log 0 = 0. Result in [0, log K].
pub fn entropy(p: &ProbDist) -> f64 {
    entropy_slice(p.probs())
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &pi in p {
        if pi > 0.0 {
            h -= pi * pi.ln();
        }
    }
    h
}

/// KL divergence Σ p log(p/q) in nats. Inside the log both arguments are
/// clamped to ≥ [`PROB_FLOOR`], so the value stays finite when q has zero
/// entries and KL(p, p) is exactly +0.0 however small p's entries get —
/// matching the flooring convention of the analytic gradients.
pub fn kl(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "kl: p has {} entries, q has {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_slice(p.probs(), q.probs()))
}

pub(crate) fn kl_slice(p: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            d += pi * (pi.max(PROB_FLOOR) / qi.max(PROB_FLOOR)).ln();
        }
    }
    d
}

/// Weighted Jensen-Shannon divergence over M ≥ 2 distributions:
/// Σ w_j KL(d_j ‖ m) with m = Σ w_j d_j. Bounded above by entropy(w).
pub fn js_weighted(w: &MixtureWeights, dists: &[ProbDist]) -> Result<f64> {
    if dists.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "js_weighted: {} weights but {} distributions",
            w.len(),
            dists.len()
        )));
    }
    let k = dists[0].len();
    for (j, d) in dists.iter().enumerate() {
        if d.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "js_weighted: distribution {j} has {} entries, expected {k}",
                d.len()
            )));
        }
    }
    let mut mean = vec![0.0; k];
    for (wj, d) in w.weights().iter().zip(dists) {
        for (mi, &di) in mean.iter_mut().zip(d.probs()) {
            *mi += wj * di;
        }
    }
    let mut js = 0.0;
    for (wj, d) in w.weights().iter().zip(dists) {
        js += wj * kl_slice(d.probs(), &mean);
    }
    Ok(js)
}

/// JS_π(p1, p2) = π KL(p1 ‖ m) + (1−π) KL(p2 ‖ m) with m = π p1 + (1−π) p2.
pub fn js_pi(pi: f64, p1: &ProbDist, p2: &ProbDist) -> Result<f64> {
    let w = MixtureWeights::two(pi)?;
    js_weighted(&w, &[p1.clone(), p2.clone()])
}
