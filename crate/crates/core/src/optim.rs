//! AdamW with decoupled weight decay.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{ParamSet, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-9,
        }
    }
}

/// Optimizer state: bias-corrected first/second moments per parameter name.
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    /// One update over every gradient-requiring parameter. Weight decay is
    /// decoupled: applied directly to the pre-update weights, not mixed into
    /// the gradient moments.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), TensorError> {
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - math::powf(c.beta1, t as f64);
        let bc2 = 1.0 - math::powf(c.beta2, t as f64);
        for (name, tensor) in params.iter_mut() {
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor
                .grad()
                .ok_or_else(|| TensorError::MissingGrad { name: name.clone() })?
                .to_vec();
            let n = grad.len();
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let data = tensor.data_mut();
            for i in 0..n {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let decay = c.weight_decay * data[i];
                data[i] -= c.lr * (m_hat / (math::sqrt(v_hat) + c.epsilon) + decay);
            }
        }
        Ok(())
    }
}
