//! First-order optimizers over a [`ParamStore`].

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    AdaptiveMoments { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::AdaptiveMoments {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdaptiveMoments { .. } => "adaptive_moments",
        }
    }
}

/// Optimizer state; moment buffers follow store order.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies the stored gradients; parameters without a gradient are left
    /// untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let lr = T::lit(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for p in store.iter_mut() {
                    if let Some(g) = &p.grad {
                        for (w, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                            *w -= lr * gv;
                        }
                    }
                }
            }
            OptimizerKind::AdaptiveMoments { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
                    self.second = self.first.clone();
                }
                let (b1, b2, e) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let c1 = T::one() - T::lit(beta1.powi(self.step as i32));
                let c2 = T::one() - T::lit(beta2.powi(self.step as i32));
                for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let Some(g) = &p.grad else { continue };
                    let w = p.value.data_mut();
                    for (((wi, &gi), mi), vi) in w
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *wi -= lr * mhat / (vhat.sqrt() + e);
                    }
                }
            }
        }
    }
}
