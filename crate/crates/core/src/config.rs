//! Plain-text `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `d_model`, `n_blocks`, `n_heads`, `mlp_ratio`, `n_classes` | network size |
//! | `variant` | `full`, `no_cross_attention` or `no_context` |
//! | `aggregation` | `mean_pool` or `frame_log_prob` |
//! | `context_rows`, `context_cols`, `context_hidden` | context map and embedding widths |
//! | `max_transitions` | longest motion sequence the positional table covers |
//! | `epochs`, `batch_size`, `learning_rate`, `optimizer` (`sgd`, `adaptive_moments`), `split_fraction` | training |
//! | `beta1`, `beta2`, `eps` | adaptive moment constants |
//! | `seed` | root of every random substream |
//! | `target_hz`, `max_frames`, `root_center` | keypoint resampling |
//! | `n_clips`, `frames`, `noise_sigma`, `interaction_fraction`, `context_purity`, `clutter` (`scenes`, `background`) | synthetic data |
//!
//! `preset = bench` (allowed only as the first key) starts from the small
//! single-core network instead of the full-size defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::context::ContextDims;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::motion::MotionConfig;
use crate::optim::OptimizerKind;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub motion: MotionConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            motion: MotionConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Single-core benchmark network with default training and data.
    pub fn bench() -> Self {
        RunConfig {
            model: ModelConfig::bench(),
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "d_model" => m.d_model = parse(key, value)?,
            "n_blocks" => m.n_blocks = parse(key, value)?,
            "n_heads" => m.n_heads = parse(key, value)?,
            "mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "n_classes" => m.n_classes = parse(key, value)?,
            "variant" => m.variant = value.parse()?,
            "aggregation" => m.aggregation = value.parse()?,
            "context_rows" => {
                m.context_dims.rows = parse(key, value)?;
                self.synth.context_dims.rows = m.context_dims.rows;
            }
            "context_cols" => {
                m.context_dims.cols = parse(key, value)?;
                self.synth.context_dims.cols = m.context_dims.cols;
            }
            "context_hidden" => m.context_hidden = parse(key, value)?,
            "max_transitions" => m.max_transitions = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "split_fraction" => t.split_fraction = parse(key, value)?,
            "optimizer" => {
                t.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adaptive_moments" => OptimizerKind::adam(),
                    _ => return Err(Error::Config(format!("unknown optimizer {value:?}"))),
                }
            }
            "beta1" | "beta2" | "eps" => {
                let OptimizerKind::AdaptiveMoments { beta1, beta2, eps } = &mut t.optimizer else {
                    return Err(Error::Config(format!("{key} requires optimizer = adaptive_moments")));
                };
                let slot = match key {
                    "beta1" => beta1,
                    "beta2" => beta2,
                    _ => eps,
                };
                *slot = parse(key, value)?;
            }
            "seed" => {
                t.seed = parse(key, value)?;
                self.synth.seed = t.seed;
            }
            "target_hz" => self.motion.target_hz = parse(key, value)?,
            "max_frames" => self.motion.max_frames = parse(key, value)?,
            "root_center" => self.motion.root_center = parse(key, value)?,
            "n_clips" => self.synth.n_clips = parse(key, value)?,
            "frames" => self.synth.frames = parse(key, value)?,
            "noise_sigma" => self.synth.noise_sigma = parse(key, value)?,
            "interaction_fraction" => self.synth.interaction_fraction = parse(key, value)?,
            "context_purity" => self.synth.context_purity = parse(key, value)?,
            "clutter" => self.synth.clutter = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut first = true;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if !first {
                    return Err(Error::Config("preset must be the first key".into()));
                }
                config = match value {
                    "bench" => RunConfig::bench(),
                    "default" => RunConfig::default(),
                    _ => return Err(Error::Config(format!("unknown preset {value:?}"))),
                };
            } else {
                config.set(key, value).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            }
            first = false;
        }
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.model.context_dims != self.synth.context_dims {
            return Err(Error::Config("model and synthetic context dims differ".into()));
        }
        if !(self.motion.target_hz > 0.0) || self.motion.max_frames < 2 {
            return Err(Error::Config("target_hz must be positive and max_frames at least 2".into()));
        }
        Ok(())
    }

    /// Every key, one per line, in a form [`RunConfig::parse`] reads back
    /// to an equal value.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("d_model", m.d_model.to_string());
        kv("n_blocks", m.n_blocks.to_string());
        kv("n_heads", m.n_heads.to_string());
        kv("mlp_ratio", format!("{:?}", m.mlp_ratio));
        kv("n_classes", m.n_classes.to_string());
        kv("variant", m.variant.to_string());
        kv("aggregation", m.aggregation.name().into());
        kv("context_rows", m.context_dims.rows.to_string());
        kv("context_cols", m.context_dims.cols.to_string());
        kv("context_hidden", m.context_hidden.to_string());
        kv("max_transitions", m.max_transitions.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv("split_fraction", format!("{:?}", t.split_fraction));
        match t.optimizer {
            OptimizerKind::Sgd => kv("optimizer", "sgd".into()),
            OptimizerKind::AdaptiveMoments { beta1, beta2, eps } => {
                kv("optimizer", "adaptive_moments".into());
                kv("beta1", format!("{beta1:?}"));
                kv("beta2", format!("{beta2:?}"));
                kv("eps", format!("{eps:?}"));
            }
        }
        kv("seed", t.seed.to_string());
        kv("target_hz", format!("{:?}", self.motion.target_hz));
        kv("max_frames", self.motion.max_frames.to_string());
        kv("root_center", self.motion.root_center.to_string());
        kv("n_clips", s.n_clips.to_string());
        kv("frames", s.frames.to_string());
        kv("noise_sigma", format!("{:?}", s.noise_sigma));
        kv("interaction_fraction", format!("{:?}", s.interaction_fraction));
        kv("context_purity", format!("{:?}", s.context_purity));
        kv("clutter", s.clutter.name().into());
        out
    }
}

/// Model configuration stored in a checkpoint header.
pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    Ok(RunConfig::parse(text)?.model)
}

impl FromStr for ContextDims {
    type Err = Error;

    /// `ROWSxCOLS`, e.g. `50x768`.
    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once('x')
            .ok_or_else(|| Error::Config(format!("context dims {s:?} not ROWSxCOLS")))?;
        Ok(ContextDims {
            rows: parse("context rows", r)?,
            cols: parse("context cols", c)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::bench();
        c.set("variant", "no_context").unwrap();
        c.set("learning_rate", "0.001").unwrap();
        c.set("seed", "42").unwrap();
        c.set("context_purity", "0.7").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_preset() {
        let c = RunConfig::parse("preset = bench\n# note\nepochs = 3 # short\n").unwrap();
        assert_eq!(c.model.d_model, ModelConfig::bench().d_model);
        assert_eq!(c.train.epochs, 3);
        assert!(RunConfig::parse("epochs = 3\npreset = bench").is_err());
    }

    #[test]
    fn unknown_key_and_bad_value() {
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("epochs = many").is_err());
        assert!(RunConfig::parse("just a line").is_err());
    }
}
