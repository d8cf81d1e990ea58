use serde::{Deserialize, Serialize};

use super::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { alpha: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp {
            alpha: 0.99,
            eps: 1e-5,
        }
    }
}

/// Minimizing optimizer with L2 weight decay folded into the gradient.
/// Per-parameter state is allocated on the first step and keyed by position,
/// so the same parameter list must be passed every time.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            lr,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moment buffers, for checkpointing.
    pub fn state(&self) -> (u64, &[Tensor], &[Tensor]) {
        (self.step, &self.first, &self.second)
    }

    pub fn restore_state(&mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) {
        self.step = step;
        self.first = first;
        self.second = second;
    }

    /// One update. Fails with [`Error::Numerical`] if any gradient is
    /// non-finite, leaving every parameter untouched.
    pub fn step(&mut self, params: Vec<&mut Param>) -> Result<()> {
        if params.iter().any(|p| !p.grad.all_finite()) {
            return Err(Error::numerical("non-finite gradient"));
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        for (i, p) in params.into_iter().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for j in 0..w.len() {
                        let gj = g[j] + self.weight_decay * w[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                        w[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::RmsProp { alpha, eps } => {
                    for j in 0..w.len() {
                        let gj = g[j] + self.weight_decay * w[j];
                        v[j] = alpha * v[j] + (1.0 - alpha) * gj * gj;
                        w[j] -= self.lr * gj / (v[j].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
