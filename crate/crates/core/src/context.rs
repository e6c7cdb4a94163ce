//! Per-frame context feature maps and the context embedding block.
//!
//! Each frame's `rows x cols` encoder map (50 patch tokens x 768 channels by
//! default) is concatenated into a single `rows * cols` row. Two kernel-1
//! convolutions with a GELU between them then reduce that row to one
//! `d_model`-wide context token per frame:
//!
//! ```text
//! [T, rows*cols] --scale--> conv(k=1) --> [T, hidden] --gelu--> conv(k=1) --> [T, d_model]
//! ```
//!
//! The concatenated row is multiplied by `1 / sqrt(rows * cols)` before the
//! first convolution so the first layer's pre-activations stay O(1) under
//! adaptive-moment updates.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_ROWS: usize = 50;
pub const DEFAULT_COLS: usize = 768;

/// Per-frame geometry of a context feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextDims {
    pub rows: usize,
    pub cols: usize,
}

impl Default for ContextDims {
    fn default() -> Self {
        ContextDims {
            rows: DEFAULT_ROWS,
            cols: DEFAULT_COLS,
        }
    }
}

impl ContextDims {
    pub fn width(self) -> usize {
        self.rows * self.cols
    }
}

/// `T x rows x cols` encoder output for one clip, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextFeatureMap {
    pub clip_id: String,
    dims: ContextDims,
    frames: usize,
    data: Vec<f32>,
}

impl ContextFeatureMap {
    pub fn new(clip_id: impl Into<String>, dims: ContextDims, data: Vec<f32>) -> Result<Self> {
        let clip_id = clip_id.into();
        let width = dims.width();
        if width == 0 || data.is_empty() || data.len() % width != 0 {
            return Err(Error::InvalidShape {
                shape: vec![data.len(), dims.rows, dims.cols],
                reason: "context data must hold a positive number of rows x cols frames".into(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("context map of {clip_id}")));
        }
        Ok(ContextFeatureMap {
            clip_id,
            dims,
            frames: data.len() / width,
            data,
        })
    }

    pub fn dims(&self) -> ContextDims {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let w = self.dims.width();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn check_dims(&self, expected: ContextDims) -> Result<()> {
        if self.dims != expected {
            return Err(Error::ShapeMismatch {
                op: "context dims",
                left: vec![self.dims.rows, self.dims.cols],
                right: vec![expected.rows, expected.cols],
            });
        }
        Ok(())
    }

    /// The concatenated `[T, rows * cols]` matrix.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.frames, self.dims.width()],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
        .expect("validated at construction")
    }

    /// Rows of this map with frame order permuted by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for &t in order {
            if t >= self.frames {
                return Err(Error::InvalidShape {
                    shape: vec![self.frames],
                    reason: format!("frame {t} out of range"),
                });
            }
            data.extend_from_slice(self.frame(t));
        }
        Self::new(self.clip_id.clone(), self.dims, data)
    }
}

/// One `d_model` token per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTokens<T> {
    tokens: Tensor<T>,
}

impl<T: Scalar> ContextTokens<T> {
    pub fn new(tokens: Tensor<T>) -> Result<Self> {
        tokens.dims2()?;
        Ok(ContextTokens { tokens })
    }

    pub fn frames(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tokens
    }
}

/// Parameters of the context embedding block.
#[derive(Debug)]
pub struct ContextEmbedding {
    pub dims: ContextDims,
    pub conv1: ParamId,
    pub bias1: ParamId,
    pub conv2: ParamId,
    pub bias2: ParamId,
    evaluations: AtomicUsize,
}

impl Clone for ContextEmbedding {
    fn clone(&self) -> Self {
        ContextEmbedding {
            dims: self.dims,
            conv1: self.conv1,
            bias1: self.bias1,
            conv2: self.conv2,
            bias2: self.bias2,
            evaluations: AtomicUsize::new(self.evaluations()),
        }
    }
}

impl ContextEmbedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: ContextDims,
        hidden: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let width = dims.width();
        let conv1 = store.insert_glorot(format!("{name}.conv1.weight"), &[1, width, hidden], width, hidden, rng)?;
        let bias1 = store.insert(format!("{name}.conv1.bias"), Tensor::zeros(&[hidden]))?;
        let conv2 = store.insert_glorot(format!("{name}.conv2.weight"), &[1, hidden, d_model], hidden, d_model, rng)?;
        let bias2 = store.insert(format!("{name}.conv2.bias"), Tensor::zeros(&[d_model]))?;
        Ok(ContextEmbedding {
            dims,
            conv1,
            bias1,
            conv2,
            bias2,
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn input_scale<T: Scalar>(&self) -> T {
        T::one() / T::from_usize(self.dims.width()).unwrap().sqrt()
    }

    /// Number of times the block has been evaluated.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Embeds a `[frames, rows * cols]` matrix (frames of any number of clips
    /// may be stacked; every row is processed independently).
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, frames: Var) -> Result<Var> {
        let (_, width) = tape.value(frames).dims2()?;
        if width != self.dims.width() {
            return Err(Error::ShapeMismatch {
                op: "embed_context",
                left: tape.shape(frames).to_vec(),
                right: vec![self.dims.rows, self.dims.cols],
            });
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        // (s X) W computed as s (X W): the scale touches the narrow side.
        let h = tape.conv1d(frames, p.var(self.conv1))?;
        let h = tape.scale(h, self.input_scale());
        let h = tape.add_bias(h, p.var(self.bias1))?;
        let h = tape.gelu(h);
        let h = tape.conv1d(h, p.var(self.conv2))?;
        tape.add_bias(h, p.var(self.bias2))
    }

    /// Gradient-free evaluation on one clip's map.
    pub fn embed<T: Scalar>(&self, store: &ParamStore<T>, map: &ContextFeatureMap) -> Result<ContextTokens<T>> {
        map.check_dims(self.dims)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(map.to_tensor());
        let y = self.forward(&mut tape, &p, x)?;
        ContextTokens::new(tape.value(y).clone())
    }
}

/// Embeds `map` with the block's current parameters.
pub fn embed_context<T: Scalar>(
    map: &ContextFeatureMap,
    block: &ContextEmbedding,
    store: &ParamStore<T>,
) -> Result<ContextTokens<T>> {
    block.embed(store, map)
}

/// Keeps all `f` context tokens for a clip of `f` motion frames; every one of
/// the `f - 1` motion queries may attend over all of them.
pub fn align_context<T: Scalar>(tokens: ContextTokens<T>, motion_frames: usize) -> Result<ContextTokens<T>> {
    if tokens.frames() != motion_frames {
        return Err(Error::FrameCountMismatch {
            expected: motion_frames,
            found: tokens.frames(),
        });
    }
    Ok(tokens)
}

/// `p` shared views of one token array.
pub fn broadcast_to_persons<T>(tokens: Arc<ContextTokens<T>>, persons: usize) -> Result<Vec<Arc<ContextTokens<T>>>> {
    if persons == 0 {
        return Err(Error::EmptyPersons);
    }
    Ok(vec![tokens; persons])
}
