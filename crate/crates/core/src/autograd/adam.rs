use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected Adam update from the gradients accumulated
    /// in `store`, then clears them. Frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (p, m) in store.iter().zip(&self.m) {
            if p.grad.len() != p.value.len() || m.len() != p.value.len() {
                return Err(Error::Dimension(format!(
                    "gradient/state shape mismatch for `{}`",
                    p.name
                )));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.frozen {
                p.grad.fill(0.0);
                continue;
            }
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    #[test]
    fn zero_gradient_leaves_value_and_counts_step() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(vec![1.5, -2.0]), false).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().value.data(), &[1.5, -2.0]);
        assert_eq!(adam.steps(), 1);
        adam.step(&mut store).unwrap();
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut store = ParamStore::new();
            let id = store.add("x", Tensor::scalar(0.0), false).unwrap();
            store.get_mut(id).grad[0] = g;
            let cfg = AdamConfig::default();
            let mut adam = AdamState::new(cfg, &store);
            adam.step(&mut store).unwrap();
            // m_hat = g, v_hat = g², so the step is lr·g/(|g| + eps).
            let expected = -cfg.lr * g / (g.abs() + cfg.epsilon);
            let moved = store.value(id).item();
            assert!((moved - expected).abs() < 1e-18);
            assert!((moved.abs() - cfg.lr).abs() < 1e-8);
        }
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(0.25), true).unwrap();
        store.get_mut(id).grad[0] = 10.0;
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            store.get_mut(id).grad[0] = 10.0;
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id).item().to_bits(), 0.25f64.to_bits());
    }

    #[test]
    fn store_layout_change_is_rejected() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(0.0), false).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.add("y", Tensor::scalar(0.0), false).unwrap();
        assert!(matches!(adam.step(&mut store), Err(Error::Dimension(_))));
    }
}
