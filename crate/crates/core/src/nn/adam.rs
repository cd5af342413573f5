//! AdamW with decoupled weight decay.

use super::linalg::Mat;
use super::tape::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(store: &ParamStore, lr: f64) -> AdamW {
        let (m, v) = store
            .ids()
            .map(|id| {
                let (r, c) = store.value(id).shape();
                (Mat::zeros(r, c), Mat::zeros(r, c))
            })
            .unzip();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            t: 0,
            m,
            v,
        }
    }

    /// One update over every parameter from its accumulated gradient.
    /// A non-finite gradient anywhere rejects the whole step and leaves
    /// parameters untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            if !store.grad(id).is_finite() {
                return Err(Error::NanGradient(store.name(id).to_string()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let grad = store.grad(id).clone();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, &g) in grad.data.iter().enumerate() {
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * g;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * g * g;
            }
            let value = store.value_mut(id);
            for j in 0..value.data.len() {
                let m_hat = m.data[j] / bc1;
                let v_hat = v.data[j] / bc2;
                // decoupled decay, then the Adam direction
                value.data[j] -= self.lr * self.weight_decay * value.data[j];
                value.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
