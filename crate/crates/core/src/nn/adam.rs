//! Adam with bias correction, operating on a parameter registry in place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::model::Param;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam<T> {
    pub cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    /// State shaped after the given registry; moments start at zero.
    pub fn new(cfg: AdamConfig, params: &[Param<T>]) -> Adam<T> {
        let m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam { cfg, m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `grads[i]` pairs with `params[i]`; `None` means zero
    /// gradient for that parameter (moments still decay).
    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let b1 = T::fromf(self.cfg.beta1);
        let b2 = T::fromf(self.cfg.beta2);
        let eps = T::fromf(self.cfg.eps);
        // Bias-corrected step size folds the corrections into lr.
        let c1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let alpha = T::fromf(self.cfg.lr * c2.sqrt() / c1);
        let one = T::one();
        for i in 0..params.len() {
            if let Some(g) = &grads[i] {
                if g.shape() != params[i].value.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "adam: grad shape {} vs param {} ({})",
                        g.shape(),
                        params[i].value.shape(),
                        params[i].name
                    )));
                }
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].value.data_mut();
            match &grads[i] {
                Some(g) => {
                    let g = g.data();
                    for j in 0..p.len() {
                        m[j] = b1 * m[j] + (one - b1) * g[j];
                        v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                        p[j] -= alpha * m[j] / (v[j].sqrt() + eps);
                    }
                }
                None => {
                    for j in 0..p.len() {
                        m[j] = b1 * m[j];
                        v[j] = b2 * v[j];
                        p[j] -= alpha * m[j] / (v[j].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
