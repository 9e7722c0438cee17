//! AdamW with decoupled weight decay, plus the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

/// AdamW optimizer state over a flat parameter vector.
///
/// Weight decay is decoupled: it scales the parameter directly rather than
/// being folded into the gradient, so decay strength is independent of the
/// adaptive step size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    /// Optimizer for `n` parameters with the usual moment coefficients
    /// (0.9, 0.999) and epsilon 1e-8.
    pub fn new(n: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Number of update steps applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update in place. Panics if the slice lengths disagree with
    /// the state — that is always a programming error.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under the optimizer");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed under the optimizer");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Cosine decay from `base` at step 0 to 0 at `total` steps.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let clamped = step.min(total) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * clamped / total as f64).cos())
}
