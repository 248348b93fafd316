use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Tensor;
use super::params::ParamStore;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Element-wise gradient clipping bound; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip: Some(5.0),
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            if !params.is_trainable(name) {
                continue;
            }
            let grad = match c.clip {
                Some(b) => grad.mapv(|g| g.clamp(-b, b)),
                None => grad.clone(),
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.raw_dim()));
            m.zip_mut_with(&grad, |m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.raw_dim()));
            v.zip_mut_with(&grad, |v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            let p = params.get_mut(name).expect("trainable parameter exists");
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= c.learning_rate * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
            });
        }
    }
}
