use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Adam moments for every parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub learning_rate: f64,
    pub step_count: u64,
    pub(crate) first_moment: Vec<Tensor<T>>,
    pub(crate) second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, learning_rate: f64, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, learning_rate, step_count: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn first_moment(&self) -> &[Tensor<T>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor<T>] {
        &self.second_moment
    }

    /// One bias-corrected Adam update of every trainable parameter.
    ///
    /// Nothing is modified when any trainable gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        if let Some(bad) = store.iter().find(|p| p.trainable && !p.grad.is_finite()) {
            return Err(TensorError::NonFiniteGradient(bad.name.clone()));
        }
        self.step_count += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let lr = self.learning_rate;
        for ((p, m), v) in store.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            if !p.trainable {
                continue;
            }
            let values = p.value.data_mut();
            for (((w, &g), m), v) in values.iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let g = g.as_f64();
                let m_new = beta1 * m.as_f64() + (1.0 - beta1) * g;
                let v_new = beta2 * v.as_f64() + (1.0 - beta2) * g * g;
                let m_hat = m_new / bias1;
                let v_hat = v_new / bias2;
                *w = T::from_f64(w.as_f64() - lr * m_hat / (v_hat.sqrt() + epsilon));
                *m = T::from_f64(m_new);
                *v = T::from_f64(v_new);
            }
        }
        Ok(())
    }
}
