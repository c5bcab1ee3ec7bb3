//! Adam parameter updates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam optimizer state: first/second-moment accumulators per parameter
/// tensor plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Creates zeroed accumulators matching `param_sizes` (element counts
    /// per parameter tensor, in the order updates will be applied).
    pub fn new(lr: f32, beta1: f32, beta2: f32, param_sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Standard classifier configuration (β1 = 0.9).
    pub fn classifier(lr: f32, param_sizes: &[usize]) -> Self {
        Self::new(lr, 0.9, 0.999, param_sizes)
    }

    /// DCGAN-style configuration (β1 = 0.5) for generator/discriminator
    /// training.
    pub fn gan(lr: f32, param_sizes: &[usize]) -> Self {
        Self::new(lr, 0.5, 0.999, param_sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam step. `params` and `grads` must align with the sizes the
/// state was built from. Deterministic given identical inputs.
pub fn adam_update(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::config(format!(
            "adam: expected {} parameter tensors, got {} params / {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if param.numel() != grad.numel() || param.numel() != m.len() {
            return Err(Error::shape(
                "adam_update",
                format!(
                    "param {} elements vs grad {} vs state {}",
                    param.numel(),
                    grad.numel(),
                    m.len()
                ),
            ));
        }
        let pd = param.data_mut();
        let gd = grad.data();
        for i in 0..pd.len() {
            let g = gd[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
