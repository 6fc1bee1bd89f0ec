use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using the configured learning rate.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        self.step_with_lr(params, self.config.lr)
    }

    /// One update with an explicit learning rate (used for schedules).
    /// Parameters without a gradient buffer are treated as having zero
    /// gradient.
    pub fn step_with_lr(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![params.len()],
            });
        }
        for (t, m) in params.tensors_mut().zip(&self.m) {
            if t.numel() != m.len() || t.grad().is_some_and(|g| g.len() != m.len()) {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: vec![m.len()],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in params.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = t.grad().map(<[f64]>::to_vec);
            let data = t.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::new(vec![values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store(&[1.0, -2.0, 0.5]);
        let before = s.clone();
        let mut adam = AdamState::new(&s, AdamConfig::with_lr(0.1));
        for _ in 0..25 {
            for t in s.tensors_mut() {
                let n = t.numel();
                t.set_grad(vec![0.0; n]).unwrap();
            }
            adam.step(&mut s).unwrap();
        }
        for ((_, a), (_, b)) in s.iter().zip(before.iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(adam.steps(), 25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store(&[1.0]);
        s.tensors_mut().next().unwrap().set_grad(vec![1.0]).unwrap();
        let mut adam = AdamState::new(&s, AdamConfig::with_lr(0.1));
        assert_eq!(adam.steps(), 0);
        adam.step(&mut s).unwrap();
        assert_eq!(adam.steps(), 1);
        // m_hat = 1, v_hat = 1, update = 0.1 / (1 + 1e-8)
        let p = s.iter().next().unwrap().1.data()[0];
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let s = store(&[1.0]);
        let mut other = store(&[1.0, 2.0]);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        assert!(adam.step(&mut other).is_err());
    }
}
