//! Deterministic synthetic clips with a planted motion x context interaction.
//!
//! Six motion archetypes and three context (scene) archetypes form 18 cells.
//! For the first `round(interaction_fraction * 6)` motion archetypes the label
//! depends on the scene through [`INTERACTION_TABLE`]; for the others it is
//! [`MOTION_ONLY_TABLE`]. Labels are drawn round-robin, so classes are balanced
//! by construction, and each clip's cell is drawn uniformly among the cells
//! that carry its label.
//!
//! Motion: every joint follows `base + posture[m] + amplitude[m] * sin(2 pi
//! freq[m] t / frames + phase)` with a per-clip random phase, plus Gaussian
//! noise.
//!
//! Context: each frame shows the clip's scene template with probability
//! `context_purity`, plus Gaussian noise. Other frames show clutter: either one
//! of the other scene templates or a background template shared by every
//! clip, see [`Clutter`]. Templates and archetype tables come from a fixed seed
//! and do not change with [`SynthConfig::seed`].
//!
//! Context maps are large (`frames x 50 x 768`), so a [`SynthClip`] keeps only
//! the per-frame template ids and noise offsets and regenerates its map on
//! demand, bit for bit. Context noise is read from a fixed bank of standard
//! normal draws at a random offset per frame, which keeps regeneration at
//! memcpy speed during training.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::context::{ContextDims, ContextFeatureMap};
use crate::error::{Error, Result};
use crate::motion::{EmotionLabel, KeypointClip, PersonTrack, FRAME_WIDTH};
use crate::seed::{substream, Stream};

pub const MOTION_ARCHETYPES: usize = 6;
pub const CONTEXT_ARCHETYPES: usize = 3;
pub const CLASSES: usize = 6;

/// Label of an interaction motion archetype under each scene. Each row maps one
/// motion to three distinct emotions.
pub const INTERACTION_TABLE: [[usize; CONTEXT_ARCHETYPES]; MOTION_ARCHETYPES] = [
    [0, 1, 2],
    [1, 2, 0],
    [2, 0, 1],
    [3, 4, 5],
    [4, 5, 3],
    [5, 3, 4],
];

/// Label of a motion archetype whose emotion ignores the scene.
pub const MOTION_ONLY_TABLE: [usize; MOTION_ARCHETYPES] = [0, 1, 2, 3, 4, 5];

const ARCHETYPE_SEED: u64 = 0x4d6f_456d_6f53_796e;
const NOISE_BANK_LEN: usize = 1 << 22;

/// What a context frame shows when it does not show the clip's scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clutter {
    /// Another scene, so frames contradict each other.
    Scenes,
    /// A scene-free background, so the evidence is sparse but never wrong.
    Background,
}

impl Clutter {
    pub fn name(self) -> &'static str {
        match self {
            Clutter::Scenes => "scenes",
            Clutter::Background => "background",
        }
    }
}

impl std::str::FromStr for Clutter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scenes" => Ok(Clutter::Scenes),
            "background" => Ok(Clutter::Background),
            _ => Err(Error::Config(format!("unknown clutter {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub frames: usize,
    pub classes: usize,
    pub context_archetypes: usize,
    pub motion_archetypes: usize,
    pub noise_sigma: f64,
    pub interaction_fraction: f64,
    /// Probability that a frame shows the clip's own scene template.
    pub context_purity: f64,
    pub clutter: Clutter,
    pub context_dims: ContextDims,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 1200,
            frames: 16,
            classes: CLASSES,
            context_archetypes: CONTEXT_ARCHETYPES,
            motion_archetypes: MOTION_ARCHETYPES,
            noise_sigma: 0.05,
            interaction_fraction: 0.5,
            context_purity: 0.6,
            clutter: Clutter::Scenes,
            context_dims: ContextDims::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes != CLASSES
            || self.context_archetypes != CONTEXT_ARCHETYPES
            || self.motion_archetypes != MOTION_ARCHETYPES
        {
            return bad(format!(
                "the shipped label table is {MOTION_ARCHETYPES} motions x {CONTEXT_ARCHETYPES} scenes -> {CLASSES} classes"
            ));
        }
        if !(0.0..=1.0).contains(&self.interaction_fraction) {
            return bad(format!("interaction_fraction {} not in [0, 1]", self.interaction_fraction));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.context_purity) {
            return bad(format!("context_purity {} not in [0, 1]", self.context_purity));
        }
        if self.frames < 2 {
            return bad("frames must be at least 2".into());
        }
        if self.n_clips == 0 || self.context_dims.width() == 0 {
            return bad("n_clips and context dims must be positive".into());
        }
        Ok(())
    }

    /// Number of motion archetypes whose label depends on the scene.
    pub fn interaction_motions(&self) -> usize {
        (self.interaction_fraction * self.motion_archetypes as f64).round() as usize
    }

    /// Label of cell `(motion, scene)`.
    pub fn cell_label(&self, motion: usize, scene: usize) -> usize {
        if motion < self.interaction_motions() {
            INTERACTION_TABLE[motion][scene]
        } else {
            MOTION_ONLY_TABLE[motion]
        }
    }

    /// Cells carrying `label`, in (motion, scene) order.
    pub fn cells_for(&self, label: usize) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for m in 0..self.motion_archetypes {
            for c in 0..self.context_archetypes {
                if self.cell_label(m, c) == label {
                    cells.push((m, c));
                }
            }
        }
        cells
    }

    /// `P(motion, scene, label)` under the generative rule, as integer
    /// weights over the common denominator [`CELL_DENOMINATOR`].
    pub fn cell_weights(&self) -> Vec<[[u64; CLASSES]; CONTEXT_ARCHETYPES]> {
        let mut joint = vec![[[0u64; CLASSES]; CONTEXT_ARCHETYPES]; self.motion_archetypes];
        for label in 0..self.classes {
            let cells = self.cells_for(label);
            for &(m, c) in &cells {
                joint[m][c][label] += CELL_DENOMINATOR / (self.classes * cells.len()) as u64;
            }
        }
        joint
    }
}

/// Divisible by `6 * k` for every cell count `k` in `1..=18`.
pub const CELL_DENOMINATOR: u64 = 6 * 12_252_240;

/// Optimal accuracies when the classifier observes (motion archetype, scene)
/// versus the motion archetype alone, by enumeration over cells.
pub fn bayes_gap(config: &SynthConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let joint = config.cell_weights();
    let with_context: u64 = joint
        .iter()
        .flat_map(|row| row.iter())
        .map(|labels| labels.iter().copied().max().unwrap_or(0))
        .sum();
    let motion_only: u64 = joint
        .iter()
        .map(|row| {
            (0..config.classes)
                .map(|y| row.iter().map(|labels| labels[y]).sum::<u64>())
                .max()
                .unwrap_or(0)
        })
        .sum();
    let d = CELL_DENOMINATOR as f64;
    Ok((with_context as f64 / d, motion_only as f64 / d))
}

/// Fixed archetype tables shared by every dataset.
#[derive(Debug)]
pub struct Archetypes {
    pub dims: ContextDims,
    pub base: Vec<f64>,
    pub posture: Vec<Vec<f64>>,
    pub amplitude: Vec<Vec<f64>>,
    /// Cycles per clip.
    pub frequency: Vec<f64>,
    /// One `rows * cols` template per scene, then the background.
    pub templates: Vec<Vec<f32>>,
    noise_bank: Vec<f32>,
}

impl Archetypes {
    pub fn new(dims: ContextDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(ARCHETYPE_SEED);
        let normal = |rng: &mut ChaCha8Rng, s: f64| -> f64 { s * rng.sample::<f64, _>(StandardNormal) };
        let base = (0..FRAME_WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let posture = (0..MOTION_ARCHETYPES)
            .map(|_| (0..FRAME_WIDTH).map(|_| normal(&mut rng, 0.3)).collect())
            .collect();
        let amplitude = (0..MOTION_ARCHETYPES)
            .map(|_| (0..FRAME_WIDTH).map(|_| normal(&mut rng, 0.3)).collect())
            .collect();
        let frequency = (0..MOTION_ARCHETYPES).map(|m| 1.0 + 0.2 * m as f64).collect();
        let templates = (0..=CONTEXT_ARCHETYPES)
            .map(|_| (0..dims.width()).map(|_| normal(&mut rng, 1.0) as f32).collect())
            .collect();
        let bank_len = NOISE_BANK_LEN.max(2 * dims.width());
        let noise_bank = (0..bank_len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Archetypes {
            noise_bank,
            dims,
            base,
            posture,
            amplitude,
            frequency,
            templates,
        }
    }

    /// Noise-free mean joint position of motion archetype `m`.
    pub fn rest_pose(&self, m: usize) -> Vec<f64> {
        self.base.iter().zip(&self.posture[m]).map(|(b, p)| b + p).collect()
    }
}

/// One generated clip. Its context map is regenerated on request.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub clip: KeypointClip,
    pub label: EmotionLabel,
    pub motion_archetype: usize,
    pub context_archetype: usize,
    /// Scene template shown in each frame.
    pub frame_scenes: Vec<usize>,
    noise_sigma: f64,
    noise_offsets: Vec<usize>,
    archetypes: Arc<Archetypes>,
}

impl SynthClip {
    pub fn context_map(&self) -> ContextFeatureMap {
        let width = self.archetypes.dims.width();
        let sigma = self.noise_sigma as f32;
        let mut data = Vec::with_capacity(self.frame_scenes.len() * width);
        for (&scene, &offset) in self.frame_scenes.iter().zip(&self.noise_offsets) {
            let template = &self.archetypes.templates[scene];
            let noise = &self.archetypes.noise_bank[offset..offset + width];
            data.extend(template.iter().zip(noise).map(|(&v, &z)| v + sigma * z));
        }
        ContextFeatureMap::new(self.clip.clip_id.clone(), self.archetypes.dims, data).expect("finite by construction")
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub archetypes: Arc<Archetypes>,
    pub clips: Vec<SynthClip>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let archetypes = Arc::new(Archetypes::new(config.context_dims));
    let root = substream(config.seed, Stream::Synth);
    let width = config.frames;
    let clips = (0..config.n_clips)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(root);
            // Per-clip substream: clips can be generated in any order.
            rng.set_stream(i as u64);
            let label = i % config.classes;
            let cells = config.cells_for(label);
            let (m, c) = cells[rng.gen_range(0..cells.len())];
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let freq = archetypes.frequency[m];
            let rest = archetypes.rest_pose(m);
            let mut joints = Vec::with_capacity(width * FRAME_WIDTH);
            for t in 0..width {
                let s = (std::f64::consts::TAU * freq * t as f64 / width as f64 + phase).sin();
                for k in 0..FRAME_WIDTH {
                    let noise = if config.noise_sigma > 0.0 {
                        config.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    joints.push(rest[k] + archetypes.amplitude[m][k] * s + noise);
                }
            }
            let frame_scenes = (0..width)
                .map(|_| {
                    if rng.gen_bool(config.context_purity) {
                        c
                    } else if config.clutter == Clutter::Background {
                        CONTEXT_ARCHETYPES
                    } else {
                        (c + rng.gen_range(1..config.context_archetypes)) % config.context_archetypes
                    }
                })
                .collect();
            let span = archetypes.noise_bank.len() - config.context_dims.width();
            let noise_offsets = (0..width).map(|_| rng.gen_range(0..=span)).collect();
            let clip_id = format!("synth_{i:05}");
            let label = EmotionLabel::from_index(label)?;
            Ok(SynthClip {
                clip: KeypointClip {
                    clip_id: clip_id.clone(),
                    source_fps: 4.0,
                    persons: vec![PersonTrack::new(0, joints)?],
                    label: Some(label),
                    context_ref: clip_id,
                },
                label,
                motion_archetype: m,
                context_archetype: c,
                frame_scenes,
                noise_sigma: config.noise_sigma,
                noise_offsets,
                archetypes: archetypes.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        config: config.clone(),
        archetypes,
        clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_clips: 36,
            context_dims: ContextDims { rows: 2, cols: 5 },
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn label_follows_table() {
        let cfg = small(1);
        let data = generate(&cfg).unwrap();
        for c in &data.clips {
            assert_eq!(c.label.index(), cfg.cell_label(c.motion_archetype, c.context_archetype));
            assert_eq!(c.clip.label, Some(c.label));
        }
    }

    #[test]
    fn classes_balanced() {
        let data = generate(&small(2)).unwrap();
        let mut counts = [0usize; CLASSES];
        for c in &data.clips {
            counts[c.label.index()] += 1;
        }
        assert!(counts.iter().all(|&n| n == 6));
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        for (x, y) in a.clips.iter().zip(&b.clips) {
            assert_eq!(x.clip, y.clip);
            assert_eq!(x.context_map(), y.context_map());
        }
        let c = generate(&small(6)).unwrap();
        assert!(a.clips.iter().zip(&c.clips).any(|(x, y)| x.clip != y.clip));
    }

    #[test]
    fn bayes_gap_examples() {
        let none = SynthConfig {
            interaction_fraction: 0.0,
            ..SynthConfig::default()
        };
        assert_eq!(bayes_gap(&none).unwrap(), (1.0, 1.0));
        let all = SynthConfig {
            interaction_fraction: 1.0,
            ..SynthConfig::default()
        };
        let (w, m) = bayes_gap(&all).unwrap();
        assert_eq!(w, 1.0);
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
        let (w, m) = bayes_gap(&SynthConfig::default()).unwrap();
        assert!((w - m - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SynthConfig {
                interaction_fraction: 1.5,
                ..SynthConfig::default()
            },
            SynthConfig {
                noise_sigma: -0.1,
                ..SynthConfig::default()
            },
            SynthConfig {
                motion_archetypes: 5,
                ..SynthConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn pure_context_shows_only_own_scene() {
        let cfg = SynthConfig {
            context_purity: 1.0,
            noise_sigma: 0.0,
            ..small(3)
        };
        let data = generate(&cfg).unwrap();
        for c in &data.clips {
            assert!(c.frame_scenes.iter().all(|&s| s == c.context_archetype));
            let map = c.context_map();
            assert_eq!(map.frame(0), &data.archetypes.templates[c.context_archetype][..]);
        }
    }
}
