use serde::{Deserialize, Serialize};

use super::EncoderParams;
use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimizer state for one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerState {
    pub fn new(params: &EncoderParams, hyper: AdamHyper) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            hyper,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update. Rejects non-finite gradients before touching any
    /// state.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams) -> Result<()> {
        let names = grads.named_tensors();
        if names.len() != self.first_moment.len() {
            return Err(Error::shape("optimizer: parameter tree does not match state"));
        }
        for ((name, _, g), m) in names.iter().zip(&self.first_moment) {
            if g.len() != m.len() {
                return Err(Error::shape(format!("optimizer: tensor {name} changed size")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: format!("gradient {name}"),
                    epoch: 0,
                    batch: 0,
                });
            }
        }
        self.step += 1;
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, (_, _, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(names)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
