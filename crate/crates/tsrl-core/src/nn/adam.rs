//! Adam optimizer with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return config_err(format!("adam.learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        for (name, b) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return config_err(format!("{} must lie in [0,1), got {}", name, b));
            }
        }
        if self.epsilon <= 0.0 {
            return config_err(format!("adam.epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// First and second moment accumulators, one pair per parameter, plus the
/// shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<E> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    t: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(params: &ParamStore<E>) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update from the gradients currently stored in `params`.
    ///
    /// Fails with a training error naming the parameter if any gradient is
    /// non-finite; in that case no parameter is modified.
    pub fn step(&mut self, params: &mut ParamStore<E>, cfg: &AdamConfig) -> Result<()> {
        if params.len() != self.m.len() {
            return config_err(format!(
                "adam state covers {} parameters but store has {}",
                self.m.len(),
                params.len()
            ));
        }
        for p in params.iter() {
            if p.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    step: self.t + 1,
                    message: format!("non-finite gradient in parameter '{}'", p.name),
                });
            }
        }
        self.t += 1;
        let b1 = E::from_f64_lossy(cfg.beta1);
        let b2 = E::from_f64_lossy(cfg.beta2);
        let one = E::one();
        let lr = E::from_f64_lossy(cfg.learning_rate);
        let eps = E::from_f64_lossy(cfg.epsilon);
        let c1 = E::from_f64_lossy(1.0 - cfg.beta1.powi(self.t as i32));
        let c2 = E::from_f64_lossy(1.0 - cfg.beta2.powi(self.t as i32));
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let value = p.value.data_mut();
            for ((mv, vv), (x, &g)) in
                m.iter_mut().zip(v.iter_mut()).zip(value.iter_mut().zip(p.grad.data()))
            {
                *mv = b1 * *mv + (one - b1) * g;
                *vv = b2 * *vv + (one - b2) * g * g;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
