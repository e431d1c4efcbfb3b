//! Moment-based adaptive optimizer with decoupled weight decay and a cosine
//! learning-rate schedule.

use gradcore::ParamVector;

use crate::error::{Error, Result};

pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(param_count: usize, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update with the given learning rate; errors if parameters leave
    /// the finite range.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        if grad.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Training("optimizer/parameter size mismatch".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let g = grad.values();
        let p = params.values_mut();
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[i]);
        }
        params.check_finite().map_err(|e| Error::Training(format!("non-finite parameter after update: {e}")))
    }
}

/// Cosine decay from `base` to 0 over `total_steps`; `step_index` is 0-based.
pub fn cosine_lr(base: f64, step_index: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base;
    }
    let frac = (step_index as f64 / total_steps as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}
