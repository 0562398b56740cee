//! Adam with coupled L2 regularization.

use serde::{Deserialize, Serialize};

use super::params::{flatten, Parameterized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update of `params` from `grads`, which must share its structure.
    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) {
        let g = flatten(grads);
        if self.m.len() != g.len() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_params_mut("", &mut |_, data| {
            for p in data.iter_mut() {
                let grad = g[i] + c.weight_decay * *p;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad * grad;
                let step = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                *p -= c.lr * step;
                i += 1;
            }
        });
        assert_eq!(i, g.len(), "gradient and parameter structure differ");
    }
}
