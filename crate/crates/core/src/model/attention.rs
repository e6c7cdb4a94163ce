//! Multi-head scaled dot-product attention with queries and keys/values
//! drawn from (possibly) different token sequences.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Binding, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Intermediate values of one attention call, captured for inspection.
#[derive(Clone, Debug)]
pub struct AttentionInternals<T> {
    /// Projected queries, `[n_query, d_model]`.
    pub q: Tensor<T>,
    /// Projected keys, `[n_kv, d_model]`.
    pub k: Tensor<T>,
    /// Projected values, `[n_kv, d_model]`.
    pub v: Tensor<T>,
    /// Per head: `q_h k_h^T / sqrt(head_dim)`.
    pub scores: Vec<Tensor<T>>,
    /// Per head: row-wise softmax of `scores`.
    pub weights: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub n_heads: usize,
}

impl CrossAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(CrossAttention {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng)?,
            out: Linear::new(store, &format!("{name}.out"), d_model, d_model, rng)?,
            n_heads,
        })
    }

    /// `out( concat_h softmax(q_h k_h^T / sqrt(n)) v_h )` with `q` projected
    /// from `queries` and `k`, `v` from `keys_values`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        queries: Var,
        keys_values: Var,
        capture: Option<&mut Vec<AttentionInternals<T>>>,
    ) -> Result<Var> {
        let dq = tape.value(queries).dims2()?.1;
        let dkv = tape.value(keys_values).dims2()?.1;
        if dq != dkv {
            return Err(Error::ShapeMismatch {
                op: "cross_attention",
                left: tape.shape(queries).to_vec(),
                right: tape.shape(keys_values).to_vec(),
            });
        }
        let q = self.query.forward(tape, p, queries)?;
        let k = self.key.forward(tape, p, keys_values)?;
        let v = self.value.forward(tape, p, keys_values)?;
        let (heads, internals) = attend(tape, q, k, v, self.n_heads)?;
        if let Some(sink) = capture {
            sink.push(internals);
        }
        self.out.forward(tape, p, heads)
    }
}

/// Splits projected `q`, `k`, `v` into `n_heads` column groups, attends per
/// head and concatenates the results.
pub fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
) -> Result<(Var, AttentionInternals<T>)> {
    let d = tape.value(q).dims2()?.1;
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible into {n_heads} heads")));
    }
    let hd = d / n_heads;
    let inv_sqrt = T::one() / T::from_usize(hd).unwrap().sqrt();
    let mut outs = Vec::with_capacity(n_heads);
    let mut scores = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.narrow(q, 1, h * hd, hd)?,
                tape.narrow(k, 1, h * hd, hd)?,
                tape.narrow(v, 1, h * hd, hd)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, inv_sqrt);
        let a = tape.softmax(s, 1)?;
        scores.push(tape.value(s).clone());
        weights.push(tape.value(a).clone());
        outs.push(tape.matmul(a, vh)?);
    }
    let merged = if n_heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    let internals = AttentionInternals {
        q: tape.value(q).clone(),
        k: tape.value(k).clone(),
        v: tape.value(v).clone(),
        scores,
        weights,
    };
    Ok((merged, internals))
}
