//! SGD with momentum and Adam, with decoupled additive weight decay applied
//! to weights and biases only (never to the batch-norm affine) and a global
//! gradient-norm clip. Optimizer state is kept in f64.

use crate::error::{Error, Result};
use crate::graph::{ParamKind, ParamSlot};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimKind {
    pub fn sgd() -> OptimKind {
        OptimKind::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> OptimKind {
        OptimKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimKind::Sgd { .. } => "sgd",
            OptimKind::Adam { .. } => "adam",
        }
    }
}

pub struct Optimizer {
    pub kind: OptimKind,
    /// First-moment (SGD momentum / Adam m) buffers, one per parameter slot.
    m: Vec<Vec<f64>>,
    /// Adam second-moment buffers.
    v: Vec<Vec<f64>>,
    t: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Optimizer {
    pub fn new(kind: OptimKind) -> Optimizer {
        Optimizer {
            kind,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            grad_clip: 10.0,
        }
    }

    /// Apply one update. `slots` must be the same parameter list (same order,
    /// same shapes) on every call.
    pub fn step<T: Scalar>(
        &mut self,
        slots: &mut [ParamSlot<'_, T>],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if self.m.is_empty() {
            self.m = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.v = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
        }
        if self.m.len() != slots.len() {
            return Err(Error::InvalidParam(format!(
                "optimizer state tracks {} parameters, got {}",
                self.m.len(),
                slots.len()
            )));
        }

        let mut sq_norm = 0.0f64;
        for slot in slots.iter() {
            for &g in slot.grad.data() {
                let g = g.as_f64();
                sq_norm += g * g;
            }
        }
        let clip_scale = if self.grad_clip > 0.0 && sq_norm.sqrt() > self.grad_clip {
            self.grad_clip / sq_norm.sqrt()
        } else {
            1.0
        };

        self.t += 1;
        for (i, slot) in slots.iter_mut().enumerate() {
            let decay = match slot.kind {
                ParamKind::Weight | ParamKind::Bias => weight_decay,
                ParamKind::Gamma | ParamKind::Beta => 0.0,
            };
            match self.kind {
                OptimKind::Sgd { momentum } => {
                    for (j, p) in slot.value.data_mut().iter_mut().enumerate() {
                        let g = slot.grad.data()[j].as_f64() * clip_scale;
                        self.m[i][j] = momentum * self.m[i][j] + g;
                        let mut next = p.as_f64() - lr * self.m[i][j];
                        next -= lr * decay * p.as_f64();
                        *p = T::from_f64(next);
                    }
                }
                OptimKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.t as i32);
                    let bc2 = 1.0 - beta2.powi(self.t as i32);
                    for (j, p) in slot.value.data_mut().iter_mut().enumerate() {
                        let g = slot.grad.data()[j].as_f64() * clip_scale;
                        self.m[i][j] = beta1 * self.m[i][j] + (1.0 - beta1) * g;
                        self.v[i][j] = beta2 * self.v[i][j] + (1.0 - beta2) * g * g;
                        let m_hat = self.m[i][j] / bc1;
                        let v_hat = self.v[i][j] / bc2;
                        let mut next = p.as_f64() - lr * m_hat / (v_hat.sqrt() + eps);
                        next -= lr * decay * p.as_f64();
                        *p = T::from_f64(next);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` down to `lr_min` over `epochs`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    if epochs == 0 {
        return lr0;
    }
    let phase = std::f64::consts::PI * epoch as f64 / epochs as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos())
}
