//! SGD with Nesterov momentum and coupled weight decay.
//!
//! The update is the standard implemented recurrence:
//!
//! ```text
//! g' = g + weight_decay · w
//! v  = momentum · v + g'
//! w  = w − lr · (g' + momentum · v)
//! ```

use crate::model::{MlpGrads, MlpParams};
use crate::{Error, Result};

/// Per-parameter velocity buffers plus a step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    velocity: MlpGrads,
    steps: u64,
}

impl OptimizerState {
    /// Fresh zero-velocity state shaped like `params`.
    pub fn new(params: &MlpParams) -> Self {
        Self {
            velocity: params.zero_grads(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn velocity(&self) -> &MlpGrads {
        &self.velocity
    }
}

/// One Nesterov SGD step over every parameter.
pub fn sgd_nesterov_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidParameter(format!("learning rate {lr}")));
    }
    if !momentum.is_finite() || !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidParameter(format!(
            "momentum {momentum}, outside [0, 1)"
        )));
    }
    if !weight_decay.is_finite() || weight_decay < 0.0 {
        return Err(Error::InvalidParameter(format!("weight decay {weight_decay}")));
    }
    if params.layers().len() != grads.layers.len()
        || params
            .layers()
            .iter()
            .zip(&grads.layers)
            .any(|(l, (gw, gb))| l.w.len() != gw.len() || l.b.len() != gb.len())
    {
        return Err(Error::DimensionMismatch(
            "gradient shapes do not match parameters".into(),
        ));
    }

    for (li, layer) in params.layers_mut().iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[li];
        let (vw, vb) = &mut state.velocity.layers[li];
        step_slice(&mut layer.w, gw, vw, lr, momentum, weight_decay);
        step_slice(&mut layer.b, gb, vb, lr, momentum, weight_decay);
    }
    state.steps += 1;
    Ok(())
}

fn step_slice(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, mu: f64, wd: f64) {
    for i in 0..w.len() {
        let gp = g[i] + wd * w[i];
        v[i] = mu * v[i] + gp;
        w[i] -= lr * (gp + mu * v[i]);
    }
}
