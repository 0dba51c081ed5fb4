//! Adam with decoupled weight decay, plus the cyclic and reduce-on-plateau
//! learning-rate schedules used by the two training phases.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, weight_decay: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers per parameter plus the step counter.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// One Adam update over every parameter in the store, consuming the current
/// gradients. Weight decay is decoupled: lr * wd * param is subtracted after
/// the Adam step.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState, hp: &AdamParams) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hp.beta1.powf(t);
    let bc2 = 1.0 - hp.beta2.powf(t);
    for name in store.names() {
        let grad: Vec<f64> = store.grad(&name).data.clone();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        let p: &mut Tensor = store.get_mut(&name);
        for i in 0..grad.len() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            p.data[i] -= hp.lr * hp.weight_decay * p.data[i];
        }
    }
}

/// Triangular cyclic schedule: lr climbs linearly from base to max over
/// `step_size_up` steps, then back down, repeating.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CyclicLr {
    pub base_lr: f64,
    pub max_lr: f64,
    pub step_size_up: u64,
    pub step: u64,
}

impl CyclicLr {
    pub fn new(base_lr: f64, max_lr: f64, step_size_up: u64) -> Self {
        CyclicLr { base_lr, max_lr, step_size_up, step: 0 }
    }

    /// Learning rate for the current step, then advances the counter.
    pub fn next_lr(&mut self) -> f64 {
        let cycle_len = 2 * self.step_size_up;
        let pos = self.step % cycle_len;
        let frac = if pos < self.step_size_up {
            pos as f64 / self.step_size_up as f64
        } else {
            (cycle_len - pos) as f64 / self.step_size_up as f64
        };
        self.step += 1;
        self.base_lr + frac * (self.max_lr - self.base_lr)
    }
}

/// Reduce-on-plateau: halves (factor) the rate when the monitored loss has
/// not improved for `patience` consecutive reports.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PlateauLr {
    pub lr: f64,
    pub factor: f64,
    pub patience: u32,
    pub best: f64,
    pub bad_epochs: u32,
    pub min_lr: f64,
}

impl PlateauLr {
    pub fn new(lr: f64, factor: f64, patience: u32) -> Self {
        PlateauLr { lr, factor, patience, best: f64::INFINITY, bad_epochs: 0, min_lr: 1e-9 }
    }

    /// Reports an epoch loss; returns the rate to use next.
    pub fn report(&mut self, loss: f64) -> f64 {
        if loss < self.best - 1e-12 {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
