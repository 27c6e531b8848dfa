//! Adam with decoupled weight decay over a [`ParamStore`].

use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Result, SctgError};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment buffers keyed like the parameter store.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One optimizer step over every parameter. Missing gradients are
/// treated as zero so decay still applies; a NaN gradient aborts naming
/// the offending parameter. Decay is decoupled: a grad-free parameter
/// shrinks by exactly `1 - lr * weight_decay` per step.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);

    for (name, tensor) in params.iter_mut() {
        if !tensor.requires_grad {
            continue;
        }
        let n = tensor.numel();
        if let Some(g) = &tensor.grad {
            if g.iter().any(|v| v.is_nan()) {
                return Err(SctgError::NonFinite { context: format!("gradient of {name}") });
            }
        }
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        for i in 0..n {
            let g = tensor.grad.as_ref().map_or(0.0, |gr| gr[i]);
            let decay = cfg.lr * cfg.weight_decay * tensor.data[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            tensor.data[i] -= decay;
        }
    }
    Ok(())
}
