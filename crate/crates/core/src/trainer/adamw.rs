//! AdamW with bias-corrected moments and decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamBlocks;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// First and second moments, one vector per parameter block.
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &impl ParamBlocks, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .blocks()
            .iter()
            .map(|b| vec![0.0; b.values.len()])
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn with_defaults(params: &impl ParamBlocks) -> Self {
        Self::new(params, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }
}

/// One update: `p <- p (1 - lr wd) - lr m̂ / (sqrt(v̂) + eps)`.
///
/// Gradients are checked for finiteness before anything is modified, so a bad
/// gradient leaves parameters and state untouched.
pub fn adamw_step<P: ParamBlocks>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let grad_blocks = grads.blocks();
    for b in &grad_blocks {
        if let Some(index) = b.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                block: b.name.clone(),
                index,
            });
        }
    }
    let mut param_blocks = params.blocks_mut();
    if param_blocks.len() != grad_blocks.len()
        || state.first.len() != grad_blocks.len()
        || param_blocks
            .iter()
            .zip(&grad_blocks)
            .zip(&state.first)
            .any(|(((_, p), g), m)| p.len() != g.values.len() || m.len() != p.len())
    {
        return Err(Error::Shape(
            "parameters, gradients and optimizer state differ in shape".into(),
        ));
    }

    state.step += 1;
    let t = state.step as f64;
    let correction1 = 1.0 - libm::pow(state.beta1, t);
    let correction2 = 1.0 - libm::pow(state.beta2, t);
    let decay = 1.0 - lr * weight_decay;
    for ((((_, p), g), m), v) in param_blocks
        .iter_mut()
        .zip(&grad_blocks)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g.values[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] = p[i] * decay - lr * m_hat / (libm::sqrt(v_hat) + state.eps);
        }
    }
    Ok(())
}
