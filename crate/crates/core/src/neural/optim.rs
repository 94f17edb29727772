//! Adaptive-moment optimizer with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

use super::Parameterized;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip: Option<f64>,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, clip: Option<f64>) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Clips by global norm, then applies the bias-corrected
    /// moment update. Errors out on non-finite gradients or parameters so
    /// training halts instead of silently diverging.
    pub fn step<N: Parameterized>(&mut self, net: &mut N, grads: &[f64]) -> Result<()> {
        let mut params = net.params();
        if params.len() != grads.len() {
            return Err(SimError::DimMismatch { expected: params.len(), got: grads.len() });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(SimError::NonFinite("gradients".into()));
        }
        if self.m.is_empty() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
        } else if self.m.len() != params.len() {
            return Err(SimError::DimMismatch { expected: self.m.len(), got: params.len() });
        }

        let mut grads = grads.to_vec();
        if let Some(clip) = self.clip {
            clip_global_norm(&mut grads, clip);
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(SimError::NonFinite("parameters".into()));
        }
        net.set_params(&params)
    }
}

/// Scales `grads` in place so their L2 norm does not exceed `clip`.
pub fn clip_global_norm(grads: &mut [f64], clip: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip && norm > 0.0 {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}
