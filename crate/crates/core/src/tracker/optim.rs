//! AdamW with decoupled weight decay.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for the trainable tensors of a store.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    moments: IndexMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamStore) -> Self {
        let moments = params
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, t)| (n.to_string(), (vec![0.0; t.numel()], vec![0.0; t.numel()])))
            .collect();
        Self { cfg, step: 0, moments }
    }

    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    /// One update of every tracked tensor. Tensors without an entry in
    /// `grads` are treated as having zero gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Vec<f64>>) -> Result<()> {
        if let Some(name) = grads.keys().find(|n| !self.moments.contains_key(*n)) {
            return Err(Error::invalid(format!("gradient for untracked parameter `{name}`")));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, (m, v)) in &mut self.moments {
            let theta = params.get_mut(name)?;
            let grad = grads.get(name);
            for (i, th) in theta.data_mut().iter_mut().enumerate() {
                let gi = grad.map_or(0.0, |g| g[i]);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *th -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *th);
            }
        }
        Ok(())
    }
}
