//! Adaptive-moment optimizer with bias correction.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Hyperparameters. Defaults: lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplicative learning-rate decay applied per step; 1.0 disables.
    pub lr_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr_decay: 1.0,
            max_grad_norm: None,
        }
    }
}

/// First/second moment estimates, one pair of buffers per parameter
/// tensor, plus the step counter for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One in-place update. Aborts without touching parameters or state if
    /// any gradient value is non-finite.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [Tensor<S>],
        grads: &[Vec<S>],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("adam", "parameter/state count mismatch"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.len() {
                return Err(Error::invalid("adam", "parameter/gradient shape mismatch"));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { index: i });
            }
        }

        let scale = match cfg.max_grad_norm {
            Some(max) if max > 0.0 => {
                let mut sq = 0.0f64;
                for g in grads {
                    for &v in g {
                        let v = v.as_f64();
                        sq += v * v;
                    }
                }
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64_lossy(cfg.beta1);
        let b2 = S::from_f64_lossy(cfg.beta2);
        let one = S::one();
        let lr_now = if cfg.lr_decay < 1.0 {
            cfg.learning_rate * cfg.lr_decay.powi(t - 1)
        } else {
            cfg.learning_rate
        };
        let lr = S::from_f64_lossy(lr_now);
        let eps = S::from_f64_lossy(cfg.epsilon);
        let c1 = one - S::from_f64_lossy(cfg.beta1.powi(t));
        let c2 = one - S::from_f64_lossy(cfg.beta2.powi(t));
        let gs = S::from_f64_lossy(scale);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((pv, &gv_raw), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let gv = gv_raw * gs;
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
