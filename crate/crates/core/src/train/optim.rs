//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use crate::autodiff::Tensor;
use crate::config::OptimizerConfig;
use crate::error::{Error, Result};

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { m: zeros.clone(), v: zeros }
    }
}

/// One update with 1-based `step`:
///
/// ```text
/// θ ← θ·(1 − η·wd)
/// m ← β₁m + (1 − β₁)g        v ← β₂v + (1 − β₂)g²
/// θ ← θ − η·m̂ / (√v̂ + ε)    m̂ = m/(1 − β₁ᵗ), v̂ = v/(1 − β₂ᵗ)
/// ```
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &OptimizerConfig,
    step: i64,
) -> Result<()> {
    adamw_step_scaled(params, grads, state, config, step, &[])
}

/// [`adamw_step`] with a learning-rate multiplier per parameter; missing
/// entries count as 1.
pub fn adamw_step_scaled(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &OptimizerConfig,
    step: i64,
    lr_scale: &[f64],
) -> Result<()> {
    if step <= 0 {
        return Err(Error::Contract(format!("optimizer step count must be positive, got {step}")));
    }
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim("adamw_step", &[params.len()], &[grads.len()]));
    }
    let OptimizerConfig { learning_rate, beta1: b1, beta2: b2, epsilon: eps, weight_decay: wd } = *config;
    let t = step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::dim("adamw_step", p.shape(), g.shape()));
        }
        let lr = learning_rate * lr_scale.get(i).copied().unwrap_or(1.0);
        let decay = 1.0 - lr * wd;
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Owns the moments and the step counter.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: OptimizerConfig,
    pub state: AdamState,
    pub steps: i64,
    /// Per-parameter learning-rate multipliers; empty means all 1.
    pub lr_scale: Vec<f64>,
}

impl AdamW {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Self {
        AdamW { config, state: AdamState::zeros_like(params), steps: 0, lr_scale: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        self.steps += 1;
        adamw_step_scaled(params, grads, &mut self.state, &self.config, self.steps, &self.lr_scale)
    }
}

/// Rescales `grads[ids]` so their joint L2 norm is at most `max_norm` and
/// returns the norm before clipping. `max_norm == 0` disables clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], ids: &[usize], max_norm: f64) -> f64 {
    let norm = ids.iter().map(|&i| grads[i].sq_norm()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let factor = max_norm / norm;
        for &i in ids {
            grads[i].scale_in_place(factor);
        }
    }
    norm
}
