use serde::{Deserialize, Serialize};

use super::{Gradients, MlpNet};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam over the flattened parameters of one net. Frozen layers are skipped
/// entirely, so their moments never advance.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn for_net(net: &MlpNet, config: AdamConfig) -> Self {
        Self::new(net.param_count(), config)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of a raw parameter vector.
    pub fn step_params(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err(self.m.len(), grads.len()));
        }
        self.t += 1;
        self.update_range(params, grads, 0);
        Ok(())
    }

    fn update_range(&mut self, params: &mut [f64], grads: &[f64], offset: usize) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        if lr == 0.0 {
            return;
        }
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            let g = g + weight_decay * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }

    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) -> Result<()> {
        if net.param_count() != self.m.len() || grads.layers.len() != net.layer_count() {
            return Err(shape_err(self.m.len(), net.param_count()));
        }
        for (d, g) in net.layers().zip(&grads.layers) {
            if d.w.len() != g.w.len() || d.b.len() != g.b.len() {
                return Err(shape_err(d.param_count(), g.w.len() + g.b.len()));
            }
        }
        self.t += 1;
        let frozen: Vec<bool> = (0..net.layer_count()).map(|i| net.is_frozen(i)).collect();
        let mut off = 0;
        for ((d, g), frozen) in net.layers_mut().into_iter().zip(&grads.layers).zip(frozen) {
            let (nw, nb) = (d.w.len(), d.b.len());
            if !frozen {
                self.update_range(&mut d.w, &g.w, off);
                self.update_range(&mut d.b, &g.b, off + nw);
            }
            off += nw + nb;
        }
        Ok(())
    }

    pub fn step_with_lr(&mut self, net: &mut MlpNet, grads: &Gradients, lr: f64) -> Result<()> {
        self.config.lr = lr;
        self.step(net, grads)
    }
}
