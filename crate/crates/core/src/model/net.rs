use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{AttentionInternals, CrossAttention};
use super::config::{Aggregation, ModelConfig, Variant};
use crate::autodiff::{Tape, Var};
use crate::context::{ContextEmbedding, ContextFeatureMap, ContextTokens};
use crate::error::{Error, Result};
use crate::motion::{MovementVectorSeq, VECTOR_WIDTH};
use crate::nn::{LayerNorm, Linear, Mlp};
use crate::params::{Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probability vector over the emotion classes.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionDistribution {
    pub probs: Vec<f64>,
}

impl EmotionDistribution {
    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.probs.iter().all(|&p| p >= 0.0 && p.is_finite())
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Pre-norm transformer block: attention then MLP, both residual.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm: LayerNorm,
    pub attn: CrossAttention,
    pub mlp: Mlp,
}

impl TransformerBlock {
    /// Keys/values come from `context` when given, otherwise from the
    /// normalized input itself (self-attention).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        x: Var,
        context: Option<Var>,
        capture: Option<&mut Vec<AttentionInternals<T>>>,
    ) -> Result<Var> {
        let h = self.norm.forward(tape, p, x)?;
        let kv = context.unwrap_or(h);
        let a = self.attn.forward(tape, p, h, kv, capture)?;
        let x = tape.add(x, a)?;
        self.mlp.residual(tape, p, x)
    }
}

/// The motion-to-emotion network and its parameters.
#[derive(Clone, Debug)]
pub struct MoEmoNet<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub motion_proj: Linear,
    pub positions: ParamId,
    pub context: Option<ContextEmbedding>,
    pub fuse: Option<Linear>,
    pub blocks: Vec<TransformerBlock>,
    /// Residual MLP applied after every block with one set of weights.
    pub shared: Mlp,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl<T: Scalar> MoEmoNet<T> {
    /// Fresh Glorot-initialized network. Parameter creation order is fixed, so
    /// `seed` fully determines the weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut store = ParamStore::new();
        let motion_proj = Linear::new(&mut store, "motion.proj", VECTOR_WIDTH, d, &mut rng)?;
        let positions = store.insert_glorot(
            "motion.position",
            &[config.max_transitions, d],
            config.max_transitions,
            d,
            &mut rng,
        )?;
        let context = if config.variant.uses_context() {
            Some(ContextEmbedding::new(
                &mut store,
                "context",
                config.context_dims,
                config.context_hidden,
                d,
                &mut rng,
            )?)
        } else {
            None
        };
        let fuse = if config.variant == Variant::NoCrossAttention {
            Some(Linear::new(&mut store, "fuse", 2 * d, d, &mut rng)?)
        } else {
            None
        };
        let blocks = (0..config.n_blocks)
            .map(|i| {
                let name = format!("block{i}");
                Ok(TransformerBlock {
                    norm: LayerNorm::new(&mut store, &format!("{name}.norm"), d)?,
                    attn: CrossAttention::new(&mut store, &format!("{name}.attn"), d, config.n_heads, &mut rng)?,
                    mlp: Mlp::new(&mut store, &format!("{name}.mlp"), d, config.mlp_hidden(), &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let shared = Mlp::new(&mut store, "shared", d, config.mlp_hidden(), &mut rng)?;
        let final_norm = LayerNorm::new(&mut store, "final_norm", d)?;
        let head = Linear::new(&mut store, "head", d, config.n_classes, &mut rng)?;
        Ok(MoEmoNet {
            config,
            store,
            motion_proj,
            positions,
            context,
            fuse,
            blocks,
            shared,
            final_norm,
            head,
        })
    }

    /// Rebuilds the network around previously trained parameters.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if net.store.len() != store.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match configuration ({})",
                store.len(),
                net.store.len()
            )));
        }
        for fresh in net.store.iter_mut() {
            let loaded = store
                .by_name(&fresh.name)
                .ok_or_else(|| Error::Config(format!("missing parameter {}", fresh.name)))?;
            if loaded.value.shape() != fresh.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    left: loaded.value.shape().to_vec(),
                    right: fresh.value.shape().to_vec(),
                });
            }
            fresh.value = loaded.value.clone();
        }
        Ok(net)
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        self.store.bind(tape)
    }

    /// One token per transition: flattened 102 values, linear projection,
    /// plus a learned positional row.
    pub fn motion_tokens(&self, tape: &mut Tape<T>, p: &Binding, vectors: &MovementVectorSeq) -> Result<Var> {
        let n = vectors.transitions();
        if n > self.config.max_transitions {
            return Err(Error::InvalidShape {
                shape: vec![n, VECTOR_WIDTH],
                reason: format!("clip has more than {} transitions", self.config.max_transitions),
            });
        }
        let raw = Tensor::new(
            vec![n, VECTOR_WIDTH],
            vectors.data().iter().map(|&v| T::lit(v)).collect(),
        )?;
        let x = tape.constant(raw);
        let x = self.motion_proj.forward(tape, p, x)?;
        let pos = tape.narrow(p.var(self.positions), 0, 0, n)?;
        tape.add(x, pos)
    }

    /// Embeds stacked context frames `[frames, rows * cols]`.
    pub fn context_tokens(&self, tape: &mut Tape<T>, p: &Binding, frames: Var) -> Result<Var> {
        let block = self.context.as_ref().ok_or_else(|| Error::VariantMismatch {
            variant: self.config.variant.to_string(),
            reason: "this variant has no context branch".into(),
        })?;
        block.forward(tape, p, frames)
    }

    /// Runs the transformer stack and classifier, returning `[1, n_classes]`
    /// logits. `context` holds the clip's `f` context tokens and is ignored by
    /// the no-context variant.
    pub fn forward_logits(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        vectors: &MovementVectorSeq,
        context: Option<Var>,
        mut capture: Option<&mut Vec<AttentionInternals<T>>>,
    ) -> Result<Var> {
        let n = vectors.transitions();
        let variant = self.config.variant;
        let context = if variant.uses_context() {
            let c = context.ok_or_else(|| Error::VariantMismatch {
                variant: variant.to_string(),
                reason: "context tokens required".into(),
            })?;
            let (frames, width) = tape.value(c).dims2()?;
            if width != self.config.d_model {
                return Err(Error::ShapeMismatch {
                    op: "context tokens",
                    left: vec![frames, width],
                    right: vec![n + 1, self.config.d_model],
                });
            }
            if frames != n + 1 {
                return Err(Error::FrameCountMismatch {
                    expected: n + 1,
                    found: frames,
                });
            }
            Some(c)
        } else {
            None
        };

        let mut x = self.motion_tokens(tape, p, vectors)?;
        let kv = match (variant, context) {
            (Variant::Full, c) => c,
            (Variant::NoCrossAttention, Some(c)) => {
                let start_frames = tape.narrow(c, 0, 0, n)?;
                let joined = tape.concat(&[x, start_frames], 1)?;
                x = self.fuse.as_ref().expect("fuse layer").forward(tape, p, joined)?;
                None
            }
            _ => None,
        };
        for block in &self.blocks {
            x = block.forward(tape, p, x, kv, capture.as_deref_mut())?;
            x = self.shared.residual(tape, p, x)?;
        }
        let x = self.final_norm.forward(tape, p, x)?;
        self.classify(tape, p, x)
    }

    /// Token features `[n, d_model]` to `[1, n_classes]` logits.
    pub fn classify(&self, tape: &mut Tape<T>, p: &Binding, tokens: Var) -> Result<Var> {
        let (n, d) = tape.value(tokens).dims2()?;
        if n == 0 {
            return Err(Error::Empty("token sequence"));
        }
        match self.config.aggregation {
            Aggregation::MeanPool => {
                let pooled = tape.mean(tokens, 0)?;
                let pooled = tape.reshape(pooled, &[1, d])?;
                self.head.forward(tape, p, pooled)
            }
            Aggregation::FrameLogProb => {
                let logits = self.head.forward(tape, p, tokens)?;
                let logp = tape.log_softmax(logits);
                let total = tape.mean(logp, 0)?;
                let total = tape.scale(total, T::from_usize(n).unwrap());
                tape.reshape(total, &[1, self.config.n_classes])
            }
        }
    }

    /// Gradient-free prediction from already-embedded context tokens.
    pub fn forward(&self, vectors: &MovementVectorSeq, context: Option<&ContextTokens<T>>) -> Result<EmotionDistribution> {
        self.forward_with_internals(vectors, context).map(|(d, _)| d)
    }

    pub fn forward_with_internals(
        &self,
        vectors: &MovementVectorSeq,
        context: Option<&ContextTokens<T>>,
    ) -> Result<(EmotionDistribution, Vec<AttentionInternals<T>>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let c = match context {
            Some(c) if self.config.variant.uses_context() => Some(tape.constant(c.tensor().clone())),
            _ => None,
        };
        let mut internals = Vec::new();
        let logits = self.forward_logits(&mut tape, &p, vectors, c, Some(&mut internals))?;
        Ok((distribution(tape.value(logits)), internals))
    }

    /// Embeds `map` (when the variant uses context) and predicts.
    pub fn predict(&self, vectors: &MovementVectorSeq, map: Option<&ContextFeatureMap>) -> Result<EmotionDistribution> {
        let tokens = self.embed_map(map)?;
        self.forward(vectors, tokens.as_ref())
    }

    /// Context tokens for one clip, or `None` for the no-context variant.
    pub fn embed_map(&self, map: Option<&ContextFeatureMap>) -> Result<Option<ContextTokens<T>>> {
        match (&self.context, map) {
            (None, _) => Ok(None),
            (Some(block), Some(m)) => Ok(Some(block.embed(&self.store, m)?)),
            (Some(_), None) => Err(Error::VariantMismatch {
                variant: self.config.variant.to_string(),
                reason: "context map required".into(),
            }),
        }
    }

    /// Classifies every person of a clip against one shared context
    /// embedding.
    pub fn predict_persons(
        &self,
        persons: &[MovementVectorSeq],
        map: Option<&ContextFeatureMap>,
    ) -> Result<Vec<EmotionDistribution>> {
        let tokens = self.embed_map(map)?.map(std::sync::Arc::new);
        let shared = match tokens {
            Some(t) => crate::context::broadcast_to_persons(t, persons.len())?
                .into_iter()
                .map(Some)
                .collect(),
            None => vec![None; persons.len()],
        };
        persons
            .iter()
            .zip(shared)
            .map(|(mv, ctx)| self.forward(mv, ctx.as_deref()))
            .collect()
    }
}

/// Softmax of a `[1, C]` (or `[C]`) logit tensor.
pub fn distribution<T: Scalar>(logits: &Tensor<T>) -> EmotionDistribution {
    let flat = logits.reshape(&[logits.numel()]).expect("same size");
    let probs = crate::autodiff::softmax_along(&flat, 0);
    EmotionDistribution {
        probs: probs.data().iter().map(|v| v.as_f64()).collect(),
    }
}
