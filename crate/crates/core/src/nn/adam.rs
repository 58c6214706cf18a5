use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::Scalar;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments; buffers are created on the first step.
#[derive(Debug, Clone)]
pub struct OptimState<S> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update over `params` using their accumulated gradients.
pub fn adam_step<S: Scalar>(params: &mut [&mut Param<S>], state: &mut OptimState<S>) -> Result<()> {
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        bail!(
            Shape,
            "optimizer tracks {} tensors, got {}",
            state.first.len(),
            params.len()
        );
    }
    for (p, m) in params.iter().zip(&state.first) {
        if p.len() != m.len() || p.grad.len() != p.len() {
            bail!(
                Shape,
                "{}: parameter has {} values, gradient {}, moments {}",
                p.name,
                p.len(),
                p.grad.len(),
                m.len()
            );
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (S::of(beta1), S::of(beta2));
    let (ob1, ob2) = (S::of(1.0 - beta1), S::of(1.0 - beta2));
    let step_size = S::of(lr / c1);
    let inv_sqrt_c2 = S::of(1.0 / c2.sqrt());
    let eps = S::of(eps);
    for ((p, m), v) in params
        .iter_mut()
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + ob1 * g;
            v[i] = b2 * v[i] + ob2 * g * g;
            let denom = v[i].sqrt() * inv_sqrt_c2 + eps;
            p.value[i] -= step_size * m[i] / denom;
        }
    }
    Ok(())
}
