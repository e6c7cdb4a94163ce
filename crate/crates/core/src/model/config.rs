use std::fmt;
use std::str::FromStr;

use crate::context::ContextDims;
use crate::error::{Error, Result};

/// Which fusion the network uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Motion tokens query context tokens through cross-attention.
    Full,
    /// Motion tokens only, self-attention.
    NoContext,
    /// Start-frame context token concatenated onto each motion token, then
    /// self-attention.
    NoCrossAttention,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoCrossAttention, Variant::NoContext];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContext => "no_context",
            Variant::NoCrossAttention => "no_cross_attention",
        }
    }

    pub fn uses_context(self) -> bool {
        self != Variant::NoContext
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// How per-token features become one clip-level distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Mean-pool tokens, then classify.
    MeanPool,
    /// Classify every token and sum the per-token log-probabilities.
    FrameLogProb,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::MeanPool => "mean_pool",
            Aggregation::FrameLogProb => "frame_log_prob",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_pool" => Ok(Aggregation::MeanPool),
            "frame_log_prob" => Ok(Aggregation::FrameLogProb),
            _ => Err(Error::Config(format!("unknown aggregation {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub n_classes: usize,
    pub variant: Variant,
    pub context_dims: ContextDims,
    /// Width between the two context convolutions.
    pub context_hidden: usize,
    /// Length of the learned positional table (longest supported clip is
    /// `max_transitions + 1` frames).
    pub max_transitions: usize,
    pub aggregation: Aggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_blocks: 4,
            n_heads: 4,
            mlp_ratio: 4.0,
            n_classes: 6,
            variant: Variant::Full,
            context_dims: ContextDims::default(),
            context_hidden: 1024,
            max_transitions: 15,
            aggregation: Aggregation::MeanPool,
        }
    }
}

impl ModelConfig {
    /// Single-core benchmark preset used by the ablation harness.
    pub fn bench() -> Self {
        ModelConfig {
            d_model: 32,
            n_blocks: 2,
            n_heads: 2,
            context_hidden: 16,
            ..ModelConfig::default()
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.d_model as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1");
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be positive");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.context_dims.width() == 0 || self.context_hidden == 0 {
            return bad("context dims and context_hidden must be positive");
        }
        if self.max_transitions == 0 {
            return bad("max_transitions must be positive");
        }
        Ok(())
    }
}
