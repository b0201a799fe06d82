//! Adam with bias correction and linear learning-rate warmup.

use super::{Tensor, TensorError};
use serde::{Deserialize, Serialize};

/// Per-parameter Adam moments plus the shared schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Base learning rate (delta).
    pub base_lr: f64,
    /// Warmup fraction (gamma): lr ramps linearly over the first
    /// `warmup * total_steps` steps, then stays at `base_lr`.
    pub warmup: f64,
    pub total_steps: u64,
}

impl AdamState {
    pub fn new(numel: usize, base_lr: f64, warmup: f64, total_steps: u64) -> Self {
        AdamState {
            first_moment: vec![0.0; numel],
            second_moment: vec![0.0; numel],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
            warmup,
            total_steps,
        }
    }

    /// Effective learning rate at step `t` (1-based).
    pub fn effective_lr(&self, t: u64) -> f64 {
        let ramp = self.warmup * self.total_steps as f64;
        if ramp <= 0.0 {
            self.base_lr
        } else {
            self.base_lr * (t as f64 / ramp).min(1.0)
        }
    }

    /// One update. Moments always advance; the parameter is left untouched
    /// when the gradient is identically zero.
    pub fn step(&mut self, param: &mut Tensor, grad: &[f64]) -> Result<(), TensorError> {
        if grad.len() != param.data.len() || grad.len() != self.first_moment.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape.clone(),
                rhs: vec![grad.len()],
            });
        }
        self.step += 1;
        let t = self.step;
        let mut all_zero = true;
        for i in 0..grad.len() {
            let g = grad[i];
            if g != 0.0 {
                all_zero = false;
            }
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
        }
        if all_zero {
            return Ok(());
        }
        let lr = self.effective_lr(t);
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for i in 0..grad.len() {
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            param.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        if !param.is_finite() {
            return Err(TensorError::NonFinite { op: "adam_step" });
        }
        Ok(())
    }
}
