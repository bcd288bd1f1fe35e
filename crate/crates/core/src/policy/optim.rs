use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::numeric::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 1.0,
        }
    }
}

/// Adam with bias correction. Moments are stored in f64 regardless of the
/// parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descends along `grad` (pass the negated gradient to ascend).
    pub fn step<T: Real>(&mut self, lr: f64, params: &mut [T], grad: &[T]) -> Result<()> {
        if grad.len() != params.len() || self.m.len() != params.len() {
            return Err(UrpError::Numeric("optimizer/parameter size mismatch".into()));
        }
        let norm = grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(UrpError::Numeric("non-finite gradient norm".into()));
        }
        let scale = if self.config.max_grad_norm > 0.0 && norm > self.config.max_grad_norm {
            self.config.max_grad_norm / norm
        } else {
            1.0
        };
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i].as_f64() * scale;
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let upd = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
            params[i] -= T::lit(upd);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(UrpError::Numeric("non-finite parameter after update".into()));
        }
        Ok(())
    }
}
