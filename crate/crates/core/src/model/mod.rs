//! The cross-attention fusion network and its two ablation variants.

pub mod attention;
pub mod config;
pub mod net;

pub use attention::{attend, AttentionInternals, CrossAttention};
pub use config::{Aggregation, ModelConfig, Variant};
pub use net::{distribution, EmotionDistribution, MoEmoNet, TransformerBlock};
