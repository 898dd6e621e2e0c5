use serde::{Deserialize, Serialize};

use super::{Gradients, Network, ParamGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to the embedding gradients (`grad += c * w`).
    pub embedding_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            embedding_decay: 0.0,
        }
    }
}

/// Adaptive-moment estimation state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; net.param_count()],
            second_moment: vec![0.0; net.param_count()],
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// One bias-corrected update of `net` along `-grads` (gradients of a loss to minimize).
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let n = net.param_count();
        if grads.0.len() != n || self.first_moment.len() != n || self.second_moment.len() != n {
            return Err(Error::Shape("optimizer state does not match the network".into()));
        }
        for seg in net.segments() {
            let g = &grads.0[seg.offset..seg.offset + seg.len];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    layer: seg.name.clone(),
                });
            }
        }
        let c = self.config;
        self.step += 1;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        let segments = net.segments().to_vec();
        let params = net.params_mut();
        for seg in segments {
            let decay = match seg.group {
                ParamGroup::Embedding => c.embedding_decay,
                _ => 0.0,
            };
            let range = seg.offset..seg.offset + seg.len;
            let p = &mut params[range.clone()];
            let g = &grads.0[range.clone()];
            let m = &mut self.first_moment[range.clone()];
            let v = &mut self.second_moment[range];
            for i in 0..seg.len {
                let gi = g[i] + decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Functional wrapper: applies one update and returns the new optimizer state.
pub fn adam_step(net: &mut Network, grads: &Gradients, opt: &OptimizerState) -> Result<OptimizerState> {
    let mut next = opt.clone();
    next.step(net, grads)?;
    Ok(next)
}
