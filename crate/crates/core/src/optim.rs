//! AdamW with decoupled weight decay.

use crate::model::Parameters;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &Parameters, cfg: AdamConfig) -> AdamW {
        let zeros = |p: &Parameters| {
            p.tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect()
        };
        AdamW {
            cfg,
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    /// Resets first/second moments and the step counter.
    pub fn reset(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            for x in t.data.iter_mut() {
                *x = 0.0;
            }
        }
        self.t = 0;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
    pub fn step(&mut self, params: &mut Parameters, grads: &[Tensor], lr: f64, weight_decay: f64) {
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = &mut params.tensors_mut()[i];
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
                v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                p.data[k] -= lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + weight_decay * p.data[k]);
            }
        }
    }
}
