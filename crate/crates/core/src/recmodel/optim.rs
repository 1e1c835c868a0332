//! AdamW with decoupled weight decay.

use super::params::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One AdamW update. Decay `w <- w (1 - lr wd)` is applied before the
/// bias-corrected adaptive step.
pub fn adamw_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if params.layout() != grads.layout() || state.m.len() != params.len() {
        return Err(Error::shape("optimizer state, gradient and parameters disagree"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - lr * weight_decay;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (((w, &g), m), v) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *w *= decay;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *w -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}
