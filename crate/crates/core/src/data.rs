//! Per-person training samples and where their context maps come from.

use std::path::PathBuf;
use std::sync::Arc;

use crate::context::{ContextDims, ContextFeatureMap};
use crate::error::{Error, Result};
use crate::motion::{clip_vectors, resample_indices, KeypointClip, MotionConfig, MovementVectorSeq};
use crate::synth::{SynthClip, SynthDataset};

/// Lazily materialized context map of one clip.
#[derive(Clone, Debug)]
pub enum ContextSource {
    None,
    Memory(Arc<ContextFeatureMap>),
    /// A MOCX file, read on every load.
    File(PathBuf),
    /// Regenerated from the synthetic generator's per-clip state.
    Synthetic(Arc<SynthClip>),
}

impl ContextSource {
    pub fn load(&self) -> Result<Option<Arc<ContextFeatureMap>>> {
        Ok(match self {
            ContextSource::None => None,
            ContextSource::Memory(m) => Some(m.clone()),
            ContextSource::File(path) => Some(Arc::new(crate::io::read_context(path)?)),
            ContextSource::Synthetic(clip) => Some(Arc::new(clip.context_map())),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub clip_id: String,
    pub vectors: MovementVectorSeq,
    pub label: usize,
    pub context: ContextSource,
    /// Context frames to keep when the map was stored at the source frame
    /// rate rather than the resampled one.
    pub context_frames: Option<Vec<usize>>,
}

impl Sample {
    /// The context map restricted to this sample's frames, with its frame
    /// count checked against the motion.
    pub fn context_map(&self, dims: ContextDims) -> Result<Option<Arc<ContextFeatureMap>>> {
        let Some(map) = self.context.load()? else {
            return Ok(None);
        };
        map.check_dims(dims)?;
        let map = match &self.context_frames {
            Some(keep) => Arc::new(map.permuted(keep)?),
            None => map,
        };
        let expected = self.vectors.transitions() + 1;
        if map.frames() != expected {
            return Err(Error::FrameCountMismatch {
                expected,
                found: map.frames(),
            });
        }
        Ok(Some(map))
    }
}

/// One sample per person of `clip`. A context map with as many frames as the
/// raw clip is resampled with the same frame indices as the keypoints.
pub fn clip_samples(
    clip: &KeypointClip,
    context: ContextSource,
    context_frames: Option<usize>,
    motion: &MotionConfig,
) -> Result<Vec<Sample>> {
    let label = clip
        .label
        .ok_or_else(|| Error::InvalidLabel(format!("clip {} has no label", clip.clip_id)))?
        .index();
    let persons = clip_vectors(clip, motion)?;
    let kept = resample_indices(clip.frames(), clip.source_fps, motion.target_hz, motion.max_frames);
    let selection = match context_frames {
        Some(t) if t == kept.len() => None,
        Some(t) if t == clip.frames() => Some(kept),
        Some(t) => {
            return Err(Error::FrameCountMismatch {
                expected: kept.len(),
                found: t,
            })
        }
        None => None,
    };
    Ok(persons
        .into_iter()
        .map(|vectors| Sample {
            clip_id: clip.clip_id.clone(),
            vectors,
            label,
            context: context.clone(),
            context_frames: selection.clone(),
        })
        .collect())
}

pub fn synth_samples(data: &SynthDataset, motion: &MotionConfig) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(data.clips.len());
    for clip in &data.clips {
        let frames = clip.frame_scenes.len();
        let source = ContextSource::Synthetic(Arc::new(clip.clone()));
        out.extend(clip_samples(&clip.clip, source, Some(frames), motion)?);
    }
    Ok(out)
}

pub fn labels(samples: &[Sample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

pub fn subset(samples: &[Sample], indices: &[usize]) -> Vec<Sample> {
    indices.iter().map(|&i| samples[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{EmotionLabel, PersonTrack, FRAME_WIDTH};

    fn clip(frames: usize, fps: f64) -> KeypointClip {
        KeypointClip {
            clip_id: "c".into(),
            source_fps: fps,
            persons: vec![
                PersonTrack::new(0, (0..frames * FRAME_WIDTH).map(|i| i as f64).collect()).unwrap(),
                PersonTrack::new(1, vec![0.5; frames * FRAME_WIDTH]).unwrap(),
            ],
            label: Some(EmotionLabel::Fear),
            context_ref: "c".into(),
        }
    }

    #[test]
    fn one_sample_per_person() {
        let s = clip_samples(&clip(16, 4.0), ContextSource::None, None, &MotionConfig::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| x.label == 3 && x.vectors.transitions() == 15));
    }

    #[test]
    fn source_rate_context_is_resampled() {
        let dims = ContextDims { rows: 1, cols: 2 };
        let map = ContextFeatureMap::new("c", dims, (0..240).map(|i| i as f32).collect()).unwrap();
        let s = clip_samples(
            &clip(120, 30.0),
            ContextSource::Memory(Arc::new(map)),
            Some(120),
            &MotionConfig::default(),
        )
        .unwrap();
        let m = s[0].context_map(dims).unwrap().unwrap();
        assert_eq!(m.frames(), 16);
        assert_eq!(m.frame(1), &[14.0, 15.0]);
    }

    #[test]
    fn wrong_context_length_rejected() {
        let r = clip_samples(&clip(16, 4.0), ContextSource::None, Some(15), &MotionConfig::default());
        assert!(matches!(r, Err(Error::FrameCountMismatch { .. })));
    }
}
