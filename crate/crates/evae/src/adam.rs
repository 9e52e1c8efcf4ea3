//! Adam parameter updates with bias correction.

use crate::error::{EvaeError, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(EvaeError::Config(format!(
                "adam lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(EvaeError::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(EvaeError::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// One Adam step over every parameter using the gradients currently stored.
/// The shared step counter advances even when all gradients are zero.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    store.adam_step += 1;
    let t = store.adam_step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for p in store.iter_mut() {
        for i in 0..p.values.len() {
            let g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if !p.values.iter().all(|v| v.is_finite()) {
            return Err(EvaeError::Numeric(format!(
                "non-finite parameter after adam step in {}",
                p.name
            )));
        }
    }
    Ok(())
}
