//! Bias-corrected Adam over named parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// Moments and step counters. A tensor whose gradient is `None` on a step
/// is left untouched and its own step counter does not advance.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Per-tensor learning-rate multipliers.
    pub lr_scale: Vec<f64>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub steps: Vec<u64>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            lr_scale: vec![1.0; sizes.len()],
            m: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            v: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            steps: vec![0; sizes.len()],
            step: 0,
        }
    }
}

pub fn adam_step<T: Real>(params: &mut [&mut [T]], grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        if g.len() != p.len() || state.m[i].len() != p.len() {
            return Err(Error::Shape(format!("tensor {i}: {} params vs {} grads", p.len(), g.len())));
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let step_size = T::c(lr * state.lr_scale[i] / bc1);
        let (b1, b2) = (T::c(beta1), T::c(beta2));
        let (one, e, inv_bc2) = (T::one(), T::c(eps), T::c(1.0 / bc2));
        for (((x, &gi), m), v) in p.iter_mut().zip(g).zip(state.m[i].iter_mut()).zip(state.v[i].iter_mut()) {
            *m = b1 * *m + (one - b1) * gi;
            *v = b2 * *v + (one - b2) * gi * gi;
            *x -= step_size * *m / ((*v * inv_bc2).sqrt() + e);
        }
    }
    state.step += 1;
    Ok(())
}
