//! First-order optimizers.

use crate::numerics::{NumericsError, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

/// Optimizer hyperparameters plus per-leaf moment accumulators.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Number of completed steps; Adam bias correction uses `step` after
    /// incrementing, so the first update sees 1.
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    /// Applies one update in place.
    pub fn step(&mut self, leaves: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), NumericsError> {
        if leaves.len() != grads.len() {
            return Err(NumericsError::LengthMismatch {
                expected: leaves.len(),
                found: grads.len(),
            });
        }
        for (l, g) in leaves.iter().zip(grads) {
            if l.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    expected: l.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            g.check_finite("optimizer gradient")?;
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (l, g) in leaves.iter_mut().zip(grads) {
                    l.axpy(-self.lr, g);
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = leaves.iter().map(|l| Tensor::zeros(l.shape())).collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (l, g)) in leaves.iter_mut().zip(grads).enumerate() {
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (j, (w, &gj)) in l.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
