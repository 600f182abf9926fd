//! Adam and the learning-rate and KL-weight schedules.

use serde::{Deserialize, Serialize};

use super::Model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moments are stored per tensor in the model's visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One descent step on the gradients currently held by `model`.
    pub fn step(&mut self, model: &mut Model, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.visit_params(&mut |_, p, g| {
            if ms.len() == i {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
            i += 1;
        });
    }
}

/// Exponential decay from `lr_init` at epoch 0 to `lr_min` at `decay_epochs`,
/// constant afterwards.
pub fn lr_at(lr_init: f64, lr_min: f64, decay_epochs: usize, epoch: f64) -> f64 {
    if decay_epochs == 0 {
        return lr_min;
    }
    let frac = (epoch / decay_epochs as f64).clamp(0.0, 1.0);
    if frac >= 1.0 {
        return lr_min;
    }
    lr_init * (lr_min / lr_init).powf(frac)
}

/// Linear ramp of the KL weight from 0 to 1 over `ramp_epochs`.
pub fn kl_weight_at(ramp_epochs: usize, epoch: f64) -> f64 {
    if ramp_epochs == 0 {
        1.0
    } else {
        (epoch / ramp_epochs as f64).clamp(0.0, 1.0)
    }
}
