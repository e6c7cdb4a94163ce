//! Small layer building blocks over [`ParamStore`] + [`Tape`].

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `y = x W + b` on `[rows, d_in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.insert_glorot(format!("{name}.weight"), &[d_in, d_out], d_in, d_out, rng)?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[d_out]))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p.var(self.weight))?;
        tape.add_bias(h, p.var(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        let gamma = store.insert(format!("{name}.gamma"), Tensor::full(&[d], T::one()))?;
        let beta = store.insert(format!("{name}.beta"), Tensor::zeros(&[d]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

/// Pre-norm feed-forward residual branch: `fc2(gelu(fc1(ln(x))))`.
/// The caller adds the result back onto `x`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            norm: LayerNorm::new(store, &format!("{name}.norm"), d)?,
            fc1: Linear::new(store, &format!("{name}.fc1"), d, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, p, x)?;
        let h = self.fc1.forward(tape, p, h)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, p, h)
    }

    /// `x + forward(x)`.
    pub fn residual<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let h = self.forward(tape, p, x)?;
        tape.add(x, h)
    }
}
