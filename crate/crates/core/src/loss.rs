//! Loss functions over logits: cross entropy, Jensen-Shannon consistency
//! losses, and the usual noisy-label baselines.
//!
//! Every loss returns both the scalar value and the analytic gradient with
//! respect to each logit vector supplied. JS-family gradients flow through
//! every occurrence of the predictions, including inside mixture means; the
//! soft-bootstrap target is the one exception and is held constant during
//! differentiation. JS and GJS values are divided by the scale factor
//! Z(π) = −(1−π)·log(1−π) so that hyperparameter grids share a comparable
//! loss scale.
//!
//! The JS and GJS code paths share their mixture and log-ratio helpers, and
//! the GJS per-view coefficient is the exact binary half of the JS
//! coefficient. Halving and doubling are exact in binary floating point, so
//! `gjs_loss(y, z, z, π)` equals `js_loss(y, z, π)` bitwise: the value
//! matches, and the two view gradients sum to the JS gradient. The trainer's
//! bridge mode relies on this to reproduce a JS run with the GJS code.

use crate::divergence::{check_pi, kl_slice, ProbDist, PROB_FLOOR};
use crate::{Error, Result};

/// Default step for central-difference gradient checks.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Default additive constant for the reverse cross-entropy term: log(1e-4).
pub fn default_sce_a() -> f64 {
    1e-4f64.ln()
}

/// Selects a loss family and carries its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    CrossEntropy,
    /// JS_π(y, p) scaled by Z(π).
    Js { pi: f64 },
    /// JS_π(y, (p1+p2)/2) + (1−π)·JS_½(p1, p2), scaled by Z(π).
    Gjs { pi: f64 },
    /// GJS without the consistency term: JS_π(y, (p1+p2)/2) scaled by Z(π).
    JsMeanAblation { pi: f64 },
    /// Generalized cross entropy (1 − p_y^q)/q.
    Gce { q: f64 },
    /// α·CE + β·RCE with RCE = −A·(1 − p_y).
    Sce { alpha: f64, beta: f64, a: f64 },
    /// Cross entropy against β·y + (1−β)·p with the target's p frozen.
    BootstrapSoft { beta: f64 },
    /// Cross entropy against (1−ε)·y + ε/K.
    LabelSmoothing { epsilon: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::CrossEntropy => Ok(()),
            LossSpec::Js { pi } | LossSpec::Gjs { pi } | LossSpec::JsMeanAblation { pi } => {
                check_pi(pi)
            }
            LossSpec::Gce { q } => {
                if !q.is_finite() || q <= 0.0 || q > 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "gce q is {q}, outside (0, 1]"
                    )));
                }
                Ok(())
            }
            LossSpec::Sce { alpha, beta, a } => {
                if !alpha.is_finite() || alpha <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "sce alpha is {alpha}, must be > 0"
                    )));
                }
                if !beta.is_finite() || beta < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "sce beta is {beta}, must be >= 0"
                    )));
                }
                if !a.is_finite() || a >= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "sce A is {a}, must be < 0"
                    )));
                }
                Ok(())
            }
            LossSpec::BootstrapSoft { beta } => {
                if !beta.is_finite() || !(0.0..=1.0).contains(&beta) {
                    return Err(Error::InvalidParameter(format!(
                        "bootstrap beta is {beta}, outside [0, 1]"
                    )));
                }
                Ok(())
            }
            LossSpec::LabelSmoothing { epsilon } => {
                if !epsilon.is_finite() || !(0.0..1.0).contains(&epsilon) {
                    return Err(Error::InvalidParameter(format!(
                        "label smoothing epsilon is {epsilon}, outside [0, 1)"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Number of prediction views the loss consumes (2 for GJS-family).
    pub fn views(&self) -> usize {
        match self {
            LossSpec::Gjs { .. } | LossSpec::JsMeanAblation { .. } => 2,
            _ => 1,
        }
    }

    /// Short lowercase identifier, used in CLI flags and reports.
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::CrossEntropy => "ce",
            LossSpec::Js { .. } => "js",
            LossSpec::Gjs { .. } => "gjs",
            LossSpec::JsMeanAblation { .. } => "js-mean",
            LossSpec::Gce { .. } => "gce",
            LossSpec::Sce { .. } => "sce",
            LossSpec::BootstrapSoft { .. } => "bs",
            LossSpec::LabelSmoothing { .. } => "ls",
        }
    }

    /// Evaluate on one example. `views` holds one logit vector per prediction
    /// view; its length must equal [`LossSpec::views`].
    pub fn evaluate(&self, y: &ProbDist, views: &[&[f64]]) -> Result<LossOutput> {
        if views.len() != self.views() {
            return Err(Error::DimensionMismatch(format!(
                "loss {} takes {} logit vector(s), got {}",
                self.name(),
                self.views(),
                views.len()
            )));
        }
        match *self {
            LossSpec::CrossEntropy => ce_loss(y, views[0]),
            LossSpec::Js { pi } => js_loss(y, views[0], pi),
            LossSpec::Gjs { pi } => gjs_loss(y, views[0], views[1], pi),
            LossSpec::JsMeanAblation { pi } => js_mean_ablation_loss(y, views[0], views[1], pi),
            LossSpec::Gce { q } => gce_loss(y, views[0], q),
            LossSpec::Sce { alpha, beta, a } => sce_loss(y, views[0], alpha, beta, a),
            LossSpec::BootstrapSoft { beta } => bootstrap_soft_loss(y, views[0], beta),
            LossSpec::LabelSmoothing { epsilon } => label_smoothing_loss(y, views[0], epsilon),
        }
    }
}

/// Scalar loss plus one gradient vector per logit vector supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

impl LossOutput {
    fn checked(value: f64, grads: Vec<Vec<f64>>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss value is {value}")));
        }
        for g in &grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite loss gradient".into()));
            }
        }
        Ok(Self { value, grads })
    }
}

/// Numerically stable softmax: p_i = exp(z_i − max z) / Σ exp(z_j − max z).
pub fn softmax(logits: &[f64]) -> Result<ProbDist> {
    if logits.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidParameter("non-finite logit".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    ProbDist::new(exps)
}

fn clamp_p(x: f64) -> f64 {
    x.max(PROB_FLOOR)
}

/// dL/dz from dL/dp through the softmax Jacobian:
/// dL/dz_j = p_j · (d_j − Σ_i d_i p_i).
fn softmax_backward(p: &[f64], d: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    for (&di, &pi) in d.iter().zip(p) {
        s += di * pi;
    }
    p.iter().zip(d).map(|(&pj, &dj)| pj * (dj - s)).collect()
}

/// Mixture m = π·y + (1−π)·x, coordinate-wise.
fn mixture(pi: f64, y: &[f64], x: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(x)
        .map(|(&yk, &xk)| pi * yk + (1.0 - pi) * xk)
        .collect()
}

/// Unscaled JS_π(y, x) on raw slices, sharing [`kl_slice`] with the
/// divergence module. Both js_loss and the first GJS term go through here.
fn js_pi_slices(pi: f64, y: &[f64], x: &[f64]) -> f64 {
    let m = mixture(pi, y, x);
    pi * kl_slice(y, &m) + (1.0 - pi) * kl_slice(x, &m)
}

/// log(x_k / m_k) with both arguments floored, for m = π·y + (1−π)·x.
/// This is the gradient of JS_π(y, x) w.r.t. x up to the (1−π) factor.
fn ln_ratio_to_mixture(pi: f64, y: &[f64], x: &[f64]) -> Vec<f64> {
    let m = mixture(pi, y, x);
    x.iter()
        .zip(&m)
        .map(|(&xk, &mk)| (clamp_p(xk) / clamp_p(mk)).ln())
        .collect()
}

fn require_same_k(y: &ProbDist, logits: &[f64]) -> Result<()> {
    if logits.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "label has {} classes but got {} logits",
            y.len(),
            logits.len()
        )));
    }
    Ok(())
}

fn require_onehot(y: &ProbDist) -> Result<usize> {
    y.as_onehot()
        .ok_or_else(|| Error::InvalidParameter("label must be onehot".into()))
}

/// Cross entropy −log p_y; gradient p − y.
pub fn ce_loss(y: &ProbDist, logits: &[f64]) -> Result<LossOutput> {
    require_same_k(y, logits)?;
    let iy = require_onehot(y)?;
    let p = softmax(logits)?;
    let value = -clamp_p(p.probs()[iy]).ln();
    let mut grad = p.probs().to_vec();
    grad[iy] -= 1.0;
    LossOutput::checked(value, vec![grad])
}

/// JS_π(y, p)/Z(π) with the gradient propagated through the mixture mean.
pub fn js_loss(y: &ProbDist, logits: &[f64], pi: f64) -> Result<LossOutput> {
    check_pi(pi)?;
    require_same_k(y, logits)?;
    let z = scale_factor(pi)?;
    let p = softmax(logits)?;
    let value = js_pi_slices(pi, y.probs(), p.probs()) / z;

    let ratios = ln_ratio_to_mixture(pi, y.probs(), p.probs());
    let d: Vec<f64> = ratios.iter().map(|&r| (1.0 - pi) * r / z).collect();
    let grad = softmax_backward(p.probs(), &d);
    LossOutput::checked(value, vec![grad])
}

/// GJS loss: [JS_π(y, q) + (1−π)·JS_½(p1, p2)] / Z(π) with q = (p1+p2)/2,
/// gradients w.r.t. both logit vectors, flowing through q and both mixtures.
pub fn gjs_loss(y: &ProbDist, logits1: &[f64], logits2: &[f64], pi: f64) -> Result<LossOutput> {
    check_pi(pi)?;
    require_same_k(y, logits1)?;
    require_same_k(y, logits2)?;
    let z = scale_factor(pi)?;
    let p1 = softmax(logits1)?;
    let p2 = softmax(logits2)?;
    let (value, _, grads) = gjs_parts(pi, z, y.probs(), p1.probs(), p2.probs(), true);
    LossOutput::checked(value, grads)
}

/// GJS without the consistency term: JS_π(y, (p1+p2)/2) / Z(π).
pub fn js_mean_ablation_loss(
    y: &ProbDist,
    logits1: &[f64],
    logits2: &[f64],
    pi: f64,
) -> Result<LossOutput> {
    check_pi(pi)?;
    require_same_k(y, logits1)?;
    require_same_k(y, logits2)?;
    let z = scale_factor(pi)?;
    let p1 = softmax(logits1)?;
    let p2 = softmax(logits2)?;
    let (_, value, grads) = gjs_parts(pi, z, y.probs(), p1.probs(), p2.probs(), false);
    LossOutput::checked(value, grads)
}

/// Shared GJS computation. Returns (full scaled value, scaled mean-term
/// value, per-view logit gradients); `with_consistency` selects whether the
/// gradients include the JS_½(p1, p2) term.
///
/// The per-view coefficient is written as (1−π)/2 — the exact half of the JS
/// coefficient — and applied in the same order as in [`js_loss`], which is
/// what makes the identical-views case bitwise-equal to JS.
fn gjs_parts(
    pi: f64,
    z: f64,
    y: &[f64],
    p1: &[f64],
    p2: &[f64],
    with_consistency: bool,
) -> (f64, f64, Vec<Vec<f64>>) {
    let q: Vec<f64> = p1
        .iter()
        .zip(p2)
        .map(|(&a, &b)| 0.5 * (a + b))
        .collect();
    let mean_term = js_pi_slices(pi, y, &q);
    let cons_term = js_pi_slices(0.5, p1, p2);
    let full = (mean_term + (1.0 - pi) * cons_term) / z;
    let mean_only = mean_term / z;

    // d JS_π(y, q)/dq_k, up to the (1−π) factor, shared by both views.
    let ratios_q = ln_ratio_to_mixture(pi, y, &q);
    let half_coeff = (1.0 - pi) / 2.0;
    let mut grads = Vec::with_capacity(2);
    for p in [p1, p2] {
        let d: Vec<f64> = ratios_q
            .iter()
            .zip(p.iter().zip(&q))
            .map(|(&rq, (&pk, &qk))| {
                let bracket = if with_consistency {
                    rq + (clamp_p(pk) / clamp_p(qk)).ln()
                } else {
                    rq
                };
                half_coeff * bracket / z
            })
            .collect();
        grads.push(softmax_backward(p, &d));
    }
    (full, mean_only, grads)
}

/// Generalized cross entropy (1 − p_y^q)/q; gradient p_y^q · (p − y).
pub fn gce_loss(y: &ProbDist, logits: &[f64], q: f64) -> Result<LossOutput> {
    LossSpec::Gce { q }.validate()?;
    require_same_k(y, logits)?;
    let iy = require_onehot(y)?;
    let p = softmax(logits)?;
    let py = clamp_p(p.probs()[iy]);
    let value = (1.0 - py.powf(q)) / q;
    let c = py.powf(q);
    let grad: Vec<f64> = p
        .probs()
        .iter()
        .zip(y.probs())
        .map(|(&pk, &yk)| c * (pk - yk))
        .collect();
    LossOutput::checked(value, vec![grad])
}

/// Symmetric cross entropy α·CE + β·RCE, where RCE = −A·(1 − p_y) treats
/// log 0 in the reversed direction as the constant A < 0.
pub fn sce_loss(y: &ProbDist, logits: &[f64], alpha: f64, beta: f64, a: f64) -> Result<LossOutput> {
    LossSpec::Sce { alpha, beta, a }.validate()?;
    require_same_k(y, logits)?;
    let iy = require_onehot(y)?;
    let p = softmax(logits)?;
    let py = p.probs()[iy];
    let value = alpha * (-clamp_p(py).ln()) + beta * (-a * (1.0 - py));

    // dL/dp_y = −α/p_y; dL/dp_i = −β·A elsewhere; then the softmax Jacobian.
    let d: Vec<f64> = p
        .probs()
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if i == iy {
                -alpha / clamp_p(py)
            } else {
                -beta * a
            }
        })
        .collect();
    let grad = softmax_backward(p.probs(), &d);
    LossOutput::checked(value, vec![grad])
}

/// Soft bootstrap: cross entropy against t = β·y + (1−β)·p with the target's
/// p held constant, so the gradient is p − t.
pub fn bootstrap_soft_loss(y: &ProbDist, logits: &[f64], beta: f64) -> Result<LossOutput> {
    LossSpec::BootstrapSoft { beta }.validate()?;
    require_same_k(y, logits)?;
    let p = softmax(logits)?;
    let t: Vec<f64> = y
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(&yk, &pk)| beta * yk + (1.0 - beta) * pk)
        .collect();
    let value = -t
        .iter()
        .zip(p.probs())
        .map(|(&tk, &pk)| if tk > 0.0 { tk * clamp_p(pk).ln() } else { 0.0 })
        .sum::<f64>();
    let grad: Vec<f64> = p.probs().iter().zip(&t).map(|(&pk, &tk)| pk - tk).collect();
    LossOutput::checked(value, vec![grad])
}

/// Cross entropy against the smoothed target (1−ε)·y + ε/K; gradient p − t.
pub fn label_smoothing_loss(y: &ProbDist, logits: &[f64], epsilon: f64) -> Result<LossOutput> {
    LossSpec::LabelSmoothing { epsilon }.validate()?;
    require_same_k(y, logits)?;
    let k = y.len() as f64;
    let p = softmax(logits)?;
    let t: Vec<f64> = y
        .probs()
        .iter()
        .map(|&yk| (1.0 - epsilon) * yk + epsilon / k)
        .collect();
    let value = -t
        .iter()
        .zip(p.probs())
        .map(|(&tk, &pk)| if tk > 0.0 { tk * clamp_p(pk).ln() } else { 0.0 })
        .sum::<f64>();
    let grad: Vec<f64> = p.probs().iter().zip(&t).map(|(&pk, &tk)| pk - tk).collect();
    LossOutput::checked(value, vec![grad])
}

/// The JS/GJS denominator Z(π) = −(1−π)·log(1−π), positive on (0, 1).
pub fn scale_factor(pi: f64) -> Result<f64> {
    check_pi(pi)?;
    Ok(-(1.0 - pi) * (1.0 - pi).ln())
}

/// Central-difference gradient (L(z + h·e_i) − L(z − h·e_i)) / (2h).
pub fn finite_diff_grad<F>(mut f: F, logits: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidParameter(format!("step h is {h}, must be > 0")));
    }
    let mut grad = Vec::with_capacity(logits.len());
    let mut work = logits.to_vec();
    for i in 0..logits.len() {
        work[i] = logits[i] + h;
        let up = f(&work)?;
        work[i] = logits[i] - h;
        let down = f(&work)?;
        work[i] = logits[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at perturbed coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{entropy, js_pi, MixtureWeights};
    use rand::Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    /// Per-coordinate gradient comparison: absolute below 1e-3 magnitude,
    /// relative above it.
    fn assert_grad_close(analytic: &[f64], fd: &[f64]) {
        assert_eq!(analytic.len(), fd.len());
        for (i, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
            let mag = a.abs().max(f.abs());
            if mag < 1e-3 {
                assert!((a - f).abs() < 1e-7, "coord {i}: {a} vs {f} (abs)");
            } else {
                assert!((a - f).abs() / mag < 1e-4, "coord {i}: {a} vs {f} (rel)");
            }
        }
    }

    fn random_logits(k: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..k).map(|_| rng.random_range(-4.0..4.0)).collect()
    }

    #[test]
    fn softmax_known_values() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for &p in u.probs() {
            assert_close(p, 1.0 / 3.0, 1e-15);
        }

        // Shift invariance: only logit differences matter.
        for c in [-100.0, 0.0, 57.5] {
            let p = softmax(&[c, c + std::f64::consts::LN_2]).unwrap();
            assert_close(p.probs()[0], 1.0 / 3.0, 1e-12);
            assert_close(p.probs()[1], 2.0 / 3.0, 1e-12);
        }

        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|z| z.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (got, want) in p.probs().iter().zip(exps.iter().map(|e| e / sum)) {
            assert_close(*got, want, 1e-12);
        }
        assert_close(p.probs()[0], 0.090031, 1e-6);
        assert_close(p.probs()[1], 0.244728, 1e-6);
        assert_close(p.probs()[2], 0.665241, 1e-6);

        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&[1.0]).is_err());
    }

    #[test]
    fn ce_known_values() {
        // Extreme logits drive p to the onehot label: zero loss, zero grad.
        let y = ProbDist::onehot(2, 0).unwrap();
        let out = ce_loss(&y, &[900.0, -900.0]).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grads[0].iter().all(|&g| g.abs() < 1e-300));

        let y10 = ProbDist::onehot(10, 3).unwrap();
        let out = ce_loss(&y10, &[0.0; 10]).unwrap();
        assert_close(out.value, 10f64.ln(), 1e-12);

        let y3 = ProbDist::onehot(3, 2).unwrap();
        let out = ce_loss(&y3, &[1.0, 2.0, 3.0]).unwrap();
        assert_close(out.value, 0.407606, 1e-6);

        // Gradient equals p − y and matches finite differences.
        let fd = finite_diff_grad(
            |z| ce_loss(&y3, z).map(|o| o.value),
            &[1.0, 2.0, 3.0],
            DEFAULT_FD_STEP,
        )
        .unwrap();
        for (a, f) in out.grads[0].iter().zip(&fd) {
            assert!((a - f).abs() / a.abs().max(f.abs()).max(1.0) < 1e-6);
        }

        assert!(ce_loss(&ProbDist::uniform(3).unwrap(), &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn scale_factor_values() {
        let z = scale_factor(0.5).unwrap();
        assert_close(z, -0.5 * 0.5f64.ln(), 1e-15);
        assert_close(z, 0.346574, 1e-6);
        assert_close(scale_factor(0.9).unwrap(), -0.1 * 0.1f64.ln(), 1e-15);
        assert_close(scale_factor(0.9).unwrap(), 0.230259, 1e-6);

        let mut pi = 0.001;
        while pi < 1.0 {
            assert!(scale_factor(pi).unwrap() > 0.0, "Z({pi}) not positive");
            pi += 0.001;
        }
        assert!(scale_factor(0.0).is_err());
        assert!(scale_factor(1.0).is_err());
    }

    #[test]
    fn js_loss_known_values() {
        let y = ProbDist::onehot(2, 0).unwrap();
        let out = js_loss(&y, &[900.0, -900.0], 0.5).unwrap();
        assert!(out.value.abs() < 1e-12);

        // p = [0, 1] opposite the label: JS_0.5 = log 2, scaled to exactly 2.
        let out = js_loss(&y, &[-900.0, 900.0], 0.5).unwrap();
        assert_close(out.value, 2.0, 1e-9);

        // The value is js_pi on the softmax output, divided by Z.
        let logits = [0.3, -1.2];
        let p = softmax(&logits).unwrap();
        let out = js_loss(&y, &logits, 0.7).unwrap();
        let want = js_pi(0.7, &y, &p).unwrap() / scale_factor(0.7).unwrap();
        assert_close(out.value, want, 1e-12);

        assert!(js_loss(&y, &[0.0, 0.0], 0.0).is_err());
        assert!(js_loss(&y, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn gjs_loss_known_values() {
        let y = ProbDist::onehot(2, 0).unwrap();
        let out = gjs_loss(&y, &[900.0, -900.0], &[900.0, -900.0], 0.5).unwrap();
        assert!(out.value.abs() < 1e-12);
        assert!(out.grads.iter().flatten().all(|&g| g.abs() < 1e-300));

        // Hand-evaluated at p1 = p2 = [0.6, 0.4]: softmax(log p) recovers p.
        let logits = [0.6f64.ln(), 0.4f64.ln()];
        let out = gjs_loss(&y, &logits, &logits, 0.5).unwrap();
        let z = scale_factor(0.5).unwrap();
        assert_close(out.value * z, 0.163897, 1e-6);
        assert_close(out.value, 0.472906, 1e-6);
    }

    #[test]
    fn gjs_identical_views_is_bitwise_js() {
        let mut rng = crate::seeding::rng(17);
        for &k in &[2usize, 5, 10] {
            for _ in 0..50 {
                let z: Vec<f64> = random_logits(k, &mut rng);
                let y = ProbDist::onehot(k, rng.random_range(0..k)).unwrap();
                let pi: f64 = rng.random_range(0.01..0.99);

                let js = js_loss(&y, &z, pi).unwrap();
                let gjs = gjs_loss(&y, &z, &z, pi).unwrap();
                assert_eq!(js.value.to_bits(), gjs.value.to_bits());

                // The two view gradients are equal halves; their sum is the
                // JS gradient, bit for bit.
                for j in 0..k {
                    assert_eq!(gjs.grads[0][j].to_bits(), gjs.grads[1][j].to_bits());
                    let sum = gjs.grads[0][j] + gjs.grads[1][j];
                    assert_eq!(sum.to_bits(), js.grads[0][j].to_bits());
                }
            }
        }
    }

    #[test]
    fn gjs_symmetry_and_decomposition() {
        let mut rng = crate::seeding::rng(19);
        for _ in 0..100 {
            let k = 5;
            let z1 = random_logits(k, &mut rng);
            let z2 = random_logits(k, &mut rng);
            let y = ProbDist::onehot(k, rng.random_range(0..k)).unwrap();
            let pi: f64 = rng.random_range(0.05..0.95);

            // Swapping the prediction views leaves the value unchanged and
            // swaps the gradients.
            let ab = gjs_loss(&y, &z1, &z2, pi).unwrap();
            let ba = gjs_loss(&y, &z2, &z1, pi).unwrap();
            assert!((ab.value - ba.value).abs() <= 1e-12);
            for j in 0..k {
                assert_close(ab.grads[0][j], ba.grads[1][j], 1e-12);
                assert_close(ab.grads[1][j], ba.grads[0][j], 1e-12);
            }

            // GJS = mean-term ablation + scaled consistency term.
            let abl = js_mean_ablation_loss(&y, &z1, &z2, pi).unwrap();
            let p1 = softmax(&z1).unwrap();
            let p2 = softmax(&z2).unwrap();
            let cons = js_pi(0.5, &p1, &p2).unwrap();
            let want = abl.value + (1.0 - pi) * cons / scale_factor(pi).unwrap();
            assert_close(ab.value, want, 1e-9);
        }
    }

    #[test]
    fn gce_known_values() {
        let y = ProbDist::onehot(3, 1).unwrap();
        let out = gce_loss(&y, &[-900.0, 900.0, -900.0], 0.7).unwrap();
        assert!(out.value.abs() < 1e-12);

        // q = 1 is the mean-absolute-error limit 1 − p_y.
        let logits = [0.2, 1.4, -0.3];
        let p = softmax(&logits).unwrap();
        let out = gce_loss(&y, &logits, 1.0).unwrap();
        assert_close(out.value, 1.0 - p.probs()[1], 1e-12);

        assert!(gce_loss(&y, &logits, 0.0).is_err());
        assert!(gce_loss(&y, &logits, 1.5).is_err());
    }

    #[test]
    fn sce_known_values() {
        let a = default_sce_a();
        let y = ProbDist::onehot(4, 0).unwrap();
        let out = sce_loss(&y, &[900.0, -900.0, -900.0, -900.0], 1.0, 0.5, a).unwrap();
        assert!(out.value.abs() < 1e-12);

        // β = 0 reduces to plain cross entropy.
        let logits = [0.4, -0.8, 1.1, 0.0];
        let sce = sce_loss(&y, &logits, 1.0, 0.0, a).unwrap();
        let ce = ce_loss(&y, &logits).unwrap();
        assert_close(sce.value, ce.value, 1e-12);
        for (s, c) in sce.grads[0].iter().zip(&ce.grads[0]) {
            assert_close(*s, *c, 1e-12);
        }

        assert!(sce_loss(&y, &logits, 0.0, 1.0, a).is_err());
        assert!(sce_loss(&y, &logits, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn bootstrap_soft_known_values() {
        let y = ProbDist::onehot(3, 1).unwrap();
        let logits = [0.5, -0.2, 0.9];

        // β = 1 is plain cross entropy.
        let bs = bootstrap_soft_loss(&y, &logits, 1.0).unwrap();
        let ce = ce_loss(&y, &logits).unwrap();
        assert_close(bs.value, ce.value, 1e-12);

        // β = 0 with uniform predictions: target = p, value = log K, and the
        // gradient p − t vanishes identically.
        let bs = bootstrap_soft_loss(&y, &[0.0, 0.0, 0.0], 0.0).unwrap();
        assert_close(bs.value, 3f64.ln(), 1e-12);
        assert!(bs.grads[0].iter().all(|&g| g == 0.0));

        assert!(bootstrap_soft_loss(&y, &logits, 1.1).is_err());
    }

    #[test]
    fn label_smoothing_known_values() {
        let y = ProbDist::onehot(4, 2).unwrap();
        let logits = [0.1, -0.4, 0.8, 0.3];

        let ls = label_smoothing_loss(&y, &logits, 0.0).unwrap();
        let ce = ce_loss(&y, &logits).unwrap();
        assert_close(ls.value, ce.value, 1e-12);

        // At p = t the value is the entropy of t and the gradient vanishes.
        let eps = 0.2;
        let k = 4.0;
        let t: Vec<f64> = y
            .probs()
            .iter()
            .map(|&yk| (1.0 - eps) * yk + eps / k)
            .collect();
        let t_logits: Vec<f64> = t.iter().map(|&tk| tk.ln()).collect();
        let ls = label_smoothing_loss(&y, &t_logits, eps).unwrap();
        let t_dist = ProbDist::new(t).unwrap();
        assert_close(ls.value, entropy(&t_dist), 1e-12);
        assert!(ls.grads[0].iter().all(|&g| g.abs() < 1e-12));

        assert!(label_smoothing_loss(&y, &logits, 1.0).is_err());
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let grad = finite_diff_grad(
            |z| Ok(z.iter().map(|v| v * v).sum()),
            &[1.0, 2.0],
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert_close(grad[0], 2.0, 1e-8);
        assert_close(grad[1], 4.0, 1e-8);

        assert!(finite_diff_grad(|_| Ok(f64::NAN), &[1.0], 1e-5).is_err());
        assert!(finite_diff_grad(|z| Ok(z[0]), &[1.0], 0.0).is_err());
    }

    /// Every loss family's analytic gradient against central differences,
    /// over random logits, labels, and hyperparameters.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seeding::rng(23);
        for &k in &[2usize, 5, 10] {
            for _ in 0..100 {
                let z = random_logits(k, &mut rng);
                let iy = rng.random_range(0..k);
                let y = ProbDist::onehot(k, iy).unwrap();
                let pi: f64 = rng.random_range(0.05..0.95);
                let q: f64 = rng.random_range(0.1..1.0);
                let eps: f64 = rng.random_range(0.0..0.9);
                let bbeta: f64 = rng.random_range(0.0..1.0);
                let (alpha, sbeta) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
                let a = default_sce_a();

                let out = ce_loss(&y, &z).unwrap();
                let fd = finite_diff_grad(|w| ce_loss(&y, w).map(|o| o.value), &z, 1e-5).unwrap();
                assert_grad_close(&out.grads[0], &fd);

                let out = js_loss(&y, &z, pi).unwrap();
                let fd =
                    finite_diff_grad(|w| js_loss(&y, w, pi).map(|o| o.value), &z, 1e-5).unwrap();
                assert_grad_close(&out.grads[0], &fd);

                let out = gce_loss(&y, &z, q).unwrap();
                let fd =
                    finite_diff_grad(|w| gce_loss(&y, w, q).map(|o| o.value), &z, 1e-5).unwrap();
                assert_grad_close(&out.grads[0], &fd);

                let out = sce_loss(&y, &z, alpha, sbeta, a).unwrap();
                let fd = finite_diff_grad(
                    |w| sce_loss(&y, w, alpha, sbeta, a).map(|o| o.value),
                    &z,
                    1e-5,
                )
                .unwrap();
                assert_grad_close(&out.grads[0], &fd);

                let out = label_smoothing_loss(&y, &z, eps).unwrap();
                let fd = finite_diff_grad(
                    |w| label_smoothing_loss(&y, w, eps).map(|o| o.value),
                    &z,
                    1e-5,
                )
                .unwrap();
                assert_grad_close(&out.grads[0], &fd);

                // Bootstrap differentiates only the explicit p occurrences:
                // freeze the target at the base point inside the closure.
                let out = bootstrap_soft_loss(&y, &z, bbeta).unwrap();
                let p0 = softmax(&z).unwrap();
                let t0: Vec<f64> = y
                    .probs()
                    .iter()
                    .zip(p0.probs())
                    .map(|(&yk, &pk)| bbeta * yk + (1.0 - bbeta) * pk)
                    .collect();
                let fd = finite_diff_grad(
                    |w| {
                        let p = softmax(w)?;
                        Ok(-t0
                            .iter()
                            .zip(p.probs())
                            .map(|(&tk, &pk)| if tk > 0.0 { tk * pk.max(1e-12).ln() } else { 0.0 })
                            .sum::<f64>())
                    },
                    &z,
                    1e-5,
                )
                .unwrap();
                assert_grad_close(&out.grads[0], &fd);

                // Two-view losses: perturb each view with the other fixed.
                let z2 = random_logits(k, &mut rng);
                type TwoViewLoss = fn(&ProbDist, &[f64], &[f64], f64) -> Result<LossOutput>;
                let two_view: [TwoViewLoss; 2] = [gjs_loss, js_mean_ablation_loss];
                for f in two_view {
                    let out = f(&y, &z, &z2, pi).unwrap();
                    let fd1 =
                        finite_diff_grad(|w| f(&y, w, &z2, pi).map(|o| o.value), &z, 1e-5).unwrap();
                    let fd2 =
                        finite_diff_grad(|w| f(&y, &z, w, pi).map(|o| o.value), &z2, 1e-5).unwrap();
                    assert_grad_close(&out.grads[0], &fd1);
                    assert_grad_close(&out.grads[1], &fd2);
                }
            }
        }
    }

    #[test]
    fn losses_finite_at_extremes() {
        // Saturated logits exercise the clamping paths in every family.
        let y = ProbDist::onehot(3, 0).unwrap();
        let extremes: [&[f64]; 3] = [
            &[900.0, -900.0, -900.0],
            &[-900.0, 900.0, -900.0],
            &[-745.0, 745.0, 0.0],
        ];
        for z in extremes {
            for spec in [
                LossSpec::CrossEntropy,
                LossSpec::Js { pi: 0.5 },
                LossSpec::Gce { q: 0.7 },
                LossSpec::Sce { alpha: 1.0, beta: 1.0, a: default_sce_a() },
                LossSpec::BootstrapSoft { beta: 0.8 },
                LossSpec::LabelSmoothing { epsilon: 0.1 },
            ] {
                let out = spec.evaluate(&y, &[z]).unwrap();
                assert!(out.value.is_finite(), "{} at {z:?}", spec.name());
            }
            for spec in [LossSpec::Gjs { pi: 0.5 }, LossSpec::JsMeanAblation { pi: 0.5 }] {
                let out = spec.evaluate(&y, &[z, &[900.0, -900.0, 0.0]]).unwrap();
                assert!(out.value.is_finite(), "{} at {z:?}", spec.name());
            }
        }
    }

    #[test]
    fn spec_validation_and_dispatch() {
        assert!(LossSpec::Js { pi: 0.5 }.validate().is_ok());
        assert!(LossSpec::Js { pi: 1.0 }.validate().is_err());
        assert!(LossSpec::Gce { q: 1.0 }.validate().is_ok());
        assert!(LossSpec::Gce { q: 0.0 }.validate().is_err());
        assert!(LossSpec::BootstrapSoft { beta: 0.0 }.validate().is_ok());
        assert!(LossSpec::LabelSmoothing { epsilon: 0.99 }.validate().is_ok());
        assert_eq!(LossSpec::Gjs { pi: 0.5 }.views(), 2);
        assert_eq!(LossSpec::CrossEntropy.views(), 1);

        let y = ProbDist::onehot(2, 0).unwrap();
        let z = [0.3, -0.3];
        // View-count mismatch is rejected.
        assert!(LossSpec::Gjs { pi: 0.5 }.evaluate(&y, &[&z]).is_err());
        assert!(LossSpec::CrossEntropy.evaluate(&y, &[&z, &z]).is_err());

        let via_spec = LossSpec::Js { pi: 0.3 }.evaluate(&y, &[&z]).unwrap();
        let direct = js_loss(&y, &z, 0.3).unwrap();
        assert_eq!(via_spec.value, direct.value);

        // Upper-bound sanity: scaled JS of onehot vs opposite onehot equals
        // entropy(w)/Z; nothing exceeds it for this pi.
        let w = MixtureWeights::two(0.5).unwrap();
        let bound = entropy(&ProbDist::new(w.weights().to_vec()).unwrap())
            / scale_factor(0.5).unwrap();
        let worst = js_loss(&y, &[-900.0, 900.0], 0.5).unwrap();
        assert_close(worst.value, bound, 1e-9);
    }
}
