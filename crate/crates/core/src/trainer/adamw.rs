//! AdamW with decoupled weight decay.
//!
//! Per tensor, at step `t`:
//!
//! ```text
//! θ ← θ − lr·wd·θ                         (decaying tensors only)
//! m ← β₁ m + (1 − β₁) g
//! v ← β₂ v + (1 − β₂) g²
//! θ ← θ − lr · sqrt(1 − β₂ᵗ)/(1 − β₁ᵗ) · m / (sqrt(v) + ε)
//! ```
//!
//! Moments are kept in `f64` regardless of parameter precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One parameter tensor handed to the optimizer.
pub struct ParamSlot<'a, T> {
    pub data: &'a mut [T],
    pub grad: &'a [T],
    pub decay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn adamw_step<T: Real>(slots: &mut [ParamSlot<'_, T>], state: &mut AdamState, cfg: &AdamWConfig) -> Result<()> {
    if state.m.is_empty() {
        state.m = slots.iter().map(|s| vec![0.0; s.data.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != slots.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, got {}",
            state.m.len(),
            slots.len()
        )));
    }
    for (i, s) in slots.iter().enumerate() {
        if s.data.len() != s.grad.len() || s.data.len() != state.m[i].len() {
            return Err(Error::Shape(format!(
                "tensor {i}: {} params, {} grads, {} moments",
                s.data.len(),
                s.grad.len(),
                state.m[i].len()
            )));
        }
        if s.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of tensor {i}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let step_size = cfg.learning_rate * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for (s, (m, v)) in slots.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for j in 0..s.data.len() {
            let g = s.grad[j].as_f64();
            let mut theta = s.data[j].as_f64();
            if s.decay {
                theta *= decay;
            }
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            theta -= step_size * m[j] / (v[j].sqrt() + cfg.eps);
            s.data[j] = T::of(theta);
        }
    }
    Ok(())
}
