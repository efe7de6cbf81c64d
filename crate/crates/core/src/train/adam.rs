use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::brnn::{Gradients, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let mut zero = params.clone();
        zero.scale(0.0);
        AdamState {
            m: zero.clone(),
            v: zero,
            t: 0,
        }
    }
}

/// Element-wise Adam update for step `t` (already incremented, so `t ≥ 1`).
pub fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for j in 0..theta.len() {
        let g = grad[j];
        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[j] / c1;
        let v_hat = v[j] / c2;
        theta[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One Adam step over every tensor. Refuses non-finite gradients and leaves
/// the parameters and state untouched in that case.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    for (name, g) in NetworkParams::TENSOR_NAMES.iter().zip(grads.tensors()) {
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(format!(
                "{name}[{j}] = {}",
                g[j]
            )));
        }
    }
    state.t += 1;
    let t = state.t;
    let gs = grads.tensors();
    for (((theta, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(gs)
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        adam_update(theta, g, m, v, t, cfg);
    }
    Ok(())
}
