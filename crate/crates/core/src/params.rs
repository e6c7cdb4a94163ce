//! Named trainable parameters and their binding onto a tape.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Insertion-ordered parameter collection with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Glorot-uniform tensor with bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        self.insert(name, glorot(shape, fan_in, fan_out, rng))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Places every parameter on `tape` as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        Binding {
            vars: self.params.iter().map(|p| tape.param(p.value.clone())).collect(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the gradients of a backward pass into `grad`, scaled by `weight`.
    pub fn accumulate_grads(&mut self, binding: &Binding, grads: &Gradients<T>, weight: T) {
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            let Some(g) = grads.get(v) else { continue };
            let scaled = g.map(|x| x * weight);
            match &mut p.grad {
                Some(acc) => acc.add_assign(&scaled),
                None => p.grad = Some(scaled),
            }
        }
    }
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::<f64>::new();
        store.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(store.insert("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn glorot_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Tensor<f64> = glorot(&[20, 30], 20, 30, &mut rng);
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
    }
}
