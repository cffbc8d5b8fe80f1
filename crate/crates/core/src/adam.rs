//! Adam optimizer with bias correction and L2 regularization folded into the
//! gradient before the moment updates.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient lambda; `lambda * theta` is added to the raw gradient.
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates per parameter tensor plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    hyper: AdamHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, sizes: &[usize]) -> Self {
        Self {
            hyper,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// One update over all parameter tensors:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected,
    /// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.m.len(),
            });
        }
        for slot in 0..params.len() {
            if params[slot].len() != self.m[slot].len() || grads[slot].len() != self.m[slot].len()
            {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} elements in slot {slot}", self.m[slot].len()),
                    actual: format!("{} params / {} grads", params[slot].len(), grads[slot].len()),
                });
            }
        }
        self.step += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        for slot in 0..params.len() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let p = &mut *params[slot];
            let g = grads[slot];
            for i in 0..p.len() {
                let grad = g[i] + h.weight_decay * p[i];
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad;
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
            }
        }
        Ok(())
    }
}
