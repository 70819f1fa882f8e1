//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Invalid(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::Invalid("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::new(1e-4, 1e-8)
    }
}

/// First/second moments per parameter, indexed like the parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet<f32>) -> Self {
        let zeros = || params.ids().map(|id| vec![0.0; params.value(id).numel()]).collect::<Vec<_>>();
        AdamState { step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `None` counts
    /// as a zero gradient. Frozen parameters are left untouched. A non-finite
    /// gradient aborts the step before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Option<Vec<f32>>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Mismatch(format!(
                "{} gradients and {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            if let Some(g) = &grads[id.0] {
                if g.len() != params.value(id).numel() {
                    return Err(Error::Mismatch(format!("gradient of `{}` has the wrong length", params.name(id))));
                }
                if params.trainable(id) && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(params.name(id).to_string()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let step_size = (cfg.lr / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
        let eps = cfg.eps as f32;
        let decay = (cfg.lr * cfg.weight_decay) as f32;
        for idx in 0..params.len() {
            let id = ParamId(idx);
            if !params.trainable(id) {
                continue;
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let theta = params.value_mut(id).data_mut();
            let g = grads[idx].as_deref();
            for k in 0..theta.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let update = step_size * m[k] / (v[k].sqrt() * inv_sqrt_bc2 + eps);
                theta[k] = theta[k] - update - decay * theta[k];
            }
        }
        Ok(())
    }
}
