use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments and step counter for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<_> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected update with learning rate `lr`.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite { what: "gradient".into() });
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(epsilon));
        let (lr1, c2) = (T::of(lr / c1), T::of(c2));
        for (i, (id, g)) in store.ids().collect::<Vec<_>>().into_iter().zip(grads.iter()).enumerate() {
            let p = store.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                p[k] = p[k] - lr1 * m[k] / ((v[k] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
