//! Keypoint clips, 4 Hz resampling, per-person splitting and movement vectors.
//!
//! A movement vector pairs each joint's 3D position in frame `i` with its
//! position in frame `i + 1`: `(x_i, y_i, z_i, x_{i+1}, y_{i+1}, z_{i+1})`.
//! A track of `f` frames therefore yields an `(f - 1) x 17 x 6` array. The
//! construction is a pure copy, so the original track can be recovered bit for
//! bit.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const JOINTS: usize = 17;
pub const COORDS: usize = 3;
/// Values per frame of one person: 17 joints x 3 coordinates.
pub const FRAME_WIDTH: usize = JOINTS * COORDS;
/// Values per movement-vector transition: 17 joints x 6.
pub const VECTOR_WIDTH: usize = JOINTS * 2 * COORDS;

/// Joint slot names, slot `i` holding keypoint `L^{i+1}` of the estimator
/// output. Slots are opaque to the pipeline; adapters must map their own
/// skeleton convention onto this order.
pub const JOINT_NAMES: [&str; JOINTS] = [
    "ear_1",
    "eye_1",
    "eye_2",
    "nose",
    "ear_2",
    "hand_1",
    "elbow_1",
    "shoulder_1",
    "shoulder_2",
    "elbow_2",
    "hand_2",
    "ankle_1",
    "knee_1",
    "wrist_1",
    "wrist_2",
    "knee_2",
    "ankle_2",
];

/// The six emotion classes, indexed in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Joy = 0,
    Angry = 1,
    Disgust = 2,
    Fear = 3,
    Sadness = 4,
    Surprise = 5,
}

impl EmotionLabel {
    pub const COUNT: usize = 6;
    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Joy,
        EmotionLabel::Angry,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidLabel(i.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "joy",
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Surprise => "surprise",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == lower || (lower == "anger" && *l == EmotionLabel::Angry))
            .ok_or_else(|| Error::InvalidLabel(s.to_string()))
    }
}

/// One person's joints, `frames x 17 x 3`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonTrack {
    pub person_id: u32,
    frames: usize,
    joints: Vec<f64>,
}

impl PersonTrack {
    pub fn new(person_id: u32, joints: Vec<f64>) -> Result<Self> {
        if joints.len() % FRAME_WIDTH != 0 || joints.is_empty() {
            return Err(Error::InvalidShape {
                shape: vec![joints.len()],
                reason: format!("joint data must be a positive multiple of {FRAME_WIDTH}"),
            });
        }
        if joints.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("joints of person {person_id}")));
        }
        Ok(PersonTrack {
            person_id,
            frames: joints.len() / FRAME_WIDTH,
            joints,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> &[f64] {
        &self.joints
    }

    /// The 51 coordinates of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.joints[t * FRAME_WIDTH..(t + 1) * FRAME_WIDTH]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let b = t * FRAME_WIDTH + j * COORDS;
        [self.joints[b], self.joints[b + 1], self.joints[b + 2]]
    }

    fn select_frames(&self, indices: &[usize]) -> PersonTrack {
        let mut joints = Vec::with_capacity(indices.len() * FRAME_WIDTH);
        for &i in indices {
            joints.extend_from_slice(self.frame(i));
        }
        PersonTrack {
            person_id: self.person_id,
            frames: indices.len(),
            joints,
        }
    }

    /// Subtracts the per-frame centroid of all joints.
    pub fn root_centered(&self) -> PersonTrack {
        let mut joints = self.joints.clone();
        for frame in joints.chunks_mut(FRAME_WIDTH) {
            let mut centroid = [0.0; COORDS];
            for joint in frame.chunks(COORDS) {
                for c in 0..COORDS {
                    centroid[c] += joint[c] / JOINTS as f64;
                }
            }
            for joint in frame.chunks_mut(COORDS) {
                for c in 0..COORDS {
                    joint[c] -= centroid[c];
                }
            }
        }
        PersonTrack {
            person_id: self.person_id,
            frames: self.frames,
            joints,
        }
    }
}

/// All persons of one clip plus its label and the key of its context map.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointClip {
    pub clip_id: String,
    pub source_fps: f64,
    pub persons: Vec<PersonTrack>,
    pub label: Option<EmotionLabel>,
    pub context_ref: String,
}

impl KeypointClip {
    pub fn frames(&self) -> usize {
        self.persons.first().map_or(0, PersonTrack::frames)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.source_fps.is_finite() && self.source_fps > 0.0) {
            return Err(Error::Config(format!(
                "clip {}: source_fps must be positive, got {}",
                self.clip_id, self.source_fps
            )));
        }
        let first = self.persons.first().ok_or(Error::EmptyPersons)?;
        let f = first.frames();
        for p in &self.persons {
            if p.frames() != f {
                return Err(Error::FrameCountMismatch {
                    expected: f,
                    found: p.frames(),
                });
            }
            if p.joints.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("clip {} person {}", self.clip_id, p.person_id)));
            }
        }
        if f < 2 {
            return Err(Error::TooFewFrames(f));
        }
        Ok(())
    }
}

/// Movement-vector settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionConfig {
    pub target_hz: f64,
    pub max_frames: usize,
    pub root_center: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            target_hz: 4.0,
            max_frames: 16,
            root_center: false,
        }
    }
}

/// Source frame indices kept by [`resample`].
pub fn resample_indices(frames: usize, source_fps: f64, target_hz: f64, max_frames: usize) -> Vec<usize> {
    let step = source_fps / target_hz;
    (0..max_frames)
        .map(|k| (k as f64 * step + 1e-9).floor() as usize)
        .take_while(|&i| i < frames)
        .collect()
}

/// Keeps source frames `floor(k * source_fps / target_hz)`, `k = 0, 1, ...`,
/// up to `max_frames`, for every person alike.
pub fn resample(clip: &KeypointClip, target_hz: f64, max_frames: usize) -> Result<KeypointClip> {
    if !(target_hz > 0.0) || max_frames == 0 {
        return Err(Error::Config("target_hz and max_frames must be positive".into()));
    }
    if clip.source_fps < target_hz {
        return Err(Error::RateTooLow {
            source_fps: clip.source_fps,
            target_hz,
        });
    }
    if clip.persons.is_empty() {
        return Err(Error::EmptyPersons);
    }
    let f = clip.frames();
    if f < 2 {
        return Err(Error::TooFewFrames(f));
    }
    let indices = resample_indices(f, clip.source_fps, target_hz, max_frames);
    if indices.len() < 2 {
        return Err(Error::TooFewFrames(indices.len()));
    }
    Ok(KeypointClip {
        clip_id: clip.clip_id.clone(),
        source_fps: target_hz,
        persons: clip.persons.iter().map(|p| p.select_frames(&indices)).collect(),
        label: clip.label,
        context_ref: clip.context_ref.clone(),
    })
}

/// One entry per person, in input order. Every person shares the clip's
/// `context_ref`.
pub fn split_persons(clip: &KeypointClip) -> Result<Vec<(u32, PersonTrack)>> {
    clip.validate()?;
    Ok(clip.persons.iter().map(|p| (p.person_id, p.clone())).collect())
}

/// `(f - 1) x 17 x 6` movement vectors of one person.
#[derive(Clone, Debug, PartialEq)]
pub struct MovementVectorSeq {
    pub person_id: u32,
    transitions: usize,
    vectors: Vec<f64>,
}

impl MovementVectorSeq {
    /// Builds from raw `(transitions x 102)` data, e.g. read back from disk.
    pub fn from_raw(person_id: u32, vectors: Vec<f64>) -> Result<Self> {
        if vectors.is_empty() || vectors.len() % VECTOR_WIDTH != 0 {
            return Err(Error::InvalidShape {
                shape: vec![vectors.len()],
                reason: format!("movement vectors must be a positive multiple of {VECTOR_WIDTH}"),
            });
        }
        Ok(MovementVectorSeq {
            person_id,
            transitions: vectors.len() / VECTOR_WIDTH,
            vectors,
        })
    }

    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.transitions, JOINTS, 2 * COORDS)
    }

    pub fn data(&self) -> &[f64] {
        &self.vectors
    }

    /// The 6 values of joint `j` at transition `t`.
    pub fn vector(&self, t: usize, j: usize) -> &[f64] {
        let b = t * VECTOR_WIDTH + j * 2 * COORDS;
        &self.vectors[b..b + 2 * COORDS]
    }

    /// Flattened transition `t` (102 values), the unit fed to the model.
    pub fn token(&self, t: usize) -> &[f64] {
        &self.vectors[t * VECTOR_WIDTH..(t + 1) * VECTOR_WIDTH]
    }

    /// Recovers the `f`-frame track the vectors were built from.
    pub fn reconstruct(&self) -> PersonTrack {
        let mut joints = Vec::with_capacity((self.transitions + 1) * FRAME_WIDTH);
        for j in 0..JOINTS {
            joints.extend_from_slice(&self.vector(0, j)[..COORDS]);
        }
        for t in 0..self.transitions {
            for j in 0..JOINTS {
                joints.extend_from_slice(&self.vector(t, j)[COORDS..]);
            }
        }
        PersonTrack {
            person_id: self.person_id,
            frames: self.transitions + 1,
            joints,
        }
    }
}

pub fn movement_vectors(track: &PersonTrack) -> Result<MovementVectorSeq> {
    let f = track.frames();
    if f < 2 {
        return Err(Error::TooFewFrames(f));
    }
    let mut vectors = Vec::with_capacity((f - 1) * VECTOR_WIDTH);
    for t in 0..f - 1 {
        for j in 0..JOINTS {
            vectors.extend_from_slice(&track.joint(t, j));
            vectors.extend_from_slice(&track.joint(t + 1, j));
        }
    }
    Ok(MovementVectorSeq {
        person_id: track.person_id,
        transitions: f - 1,
        vectors,
    })
}

/// Resample, optionally root-center, and compute vectors for every person.
pub fn clip_vectors(clip: &KeypointClip, config: &MotionConfig) -> Result<Vec<MovementVectorSeq>> {
    let clip = resample(clip, config.target_hz, config.max_frames)?;
    split_persons(&clip)?
        .into_iter()
        .map(|(_, track)| {
            if config.root_center {
                movement_vectors(&track.root_centered())
            } else {
                movement_vectors(&track)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_track(id: u32, frames: usize) -> PersonTrack {
        PersonTrack::new(id, (0..frames * FRAME_WIDTH).map(|i| i as f64 * 0.25).collect()).unwrap()
    }

    fn clip(frames: usize, fps: f64, persons: usize) -> KeypointClip {
        KeypointClip {
            clip_id: "c".into(),
            source_fps: fps,
            persons: (0..persons as u32).map(|i| ramp_track(i, frames)).collect(),
            label: Some(EmotionLabel::Fear),
            context_ref: "ctx".into(),
        }
    }

    #[test]
    fn resample_30fps_to_4hz() {
        let out = resample(&clip(120, 30.0, 1), 4.0, 16).unwrap();
        assert_eq!(out.frames(), 16);
        assert_eq!(out.source_fps, 4.0);
        let expected: Vec<usize> = (0..16).map(|k| (k as f64 * 7.5).floor() as usize).collect();
        assert_eq!(expected, vec![0, 7, 15, 22, 30, 37, 45, 52, 60, 67, 75, 82, 90, 97, 105, 112]);
        assert_eq!(resample_indices(120, 30.0, 4.0, 16), expected);
        let src = &clip(120, 30.0, 1).persons[0];
        for (k, &i) in expected.iter().enumerate() {
            assert_eq!(out.persons[0].frame(k), src.frame(i));
        }
    }

    #[test]
    fn resample_matching_rate_is_identity() {
        let c = clip(16, 4.0, 2);
        assert_eq!(resample(&c, 4.0, 16).unwrap(), c);
    }

    #[test]
    fn resample_errors() {
        assert!(matches!(resample(&clip(4, 30.0, 1), 4.0, 16), Err(Error::TooFewFrames(1))));
        assert!(matches!(resample(&clip(40, 2.0, 1), 4.0, 16), Err(Error::RateTooLow { .. })));
    }

    #[test]
    fn split_examples() {
        let one = clip(5, 4.0, 1);
        let s = split_persons(&one).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].1, one.persons[0]);

        let three = split_persons(&clip(5, 4.0, 3)).unwrap();
        assert_eq!(three.iter().map(|(id, _)| *id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(three.iter().all(|(_, t)| t.frames() == 5));

        let mut bad = clip(5, 4.0, 2);
        bad.persons[1] = ramp_track(1, 6);
        assert!(matches!(split_persons(&bad), Err(Error::FrameCountMismatch { .. })));

        let mut empty = clip(5, 4.0, 1);
        empty.persons.clear();
        assert!(matches!(split_persons(&empty), Err(Error::EmptyPersons)));
    }

    #[test]
    fn vectors_shape_and_layout() {
        let mv = movement_vectors(&ramp_track(0, 16)).unwrap();
        assert_eq!(mv.shape(), (15, 17, 6));

        let mut joints = vec![0.0; 2 * FRAME_WIDTH];
        joints[FRAME_WIDTH + 5 * 3..FRAME_WIDTH + 5 * 3 + 3].copy_from_slice(&[1.0, 2.0, 3.0]);
        let mv = movement_vectors(&PersonTrack::new(0, joints).unwrap()).unwrap();
        assert_eq!(mv.vector(0, 5), &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn static_track_has_zero_displacement() {
        let frame: Vec<f64> = (0..FRAME_WIDTH).map(|i| i as f64 - 7.0).collect();
        let joints: Vec<f64> = frame.iter().copied().cycle().take(4 * FRAME_WIDTH).collect();
        let mv = movement_vectors(&PersonTrack::new(0, joints).unwrap()).unwrap();
        for t in 0..3 {
            for j in 0..JOINTS {
                let v = mv.vector(t, j);
                assert_eq!(&v[..3], &v[3..]);
                assert_eq!(&v[..3], &frame[j * 3..j * 3 + 3]);
            }
        }
    }

    #[test]
    fn single_frame_rejected() {
        assert!(matches!(movement_vectors(&ramp_track(0, 1)), Err(Error::TooFewFrames(1))));
    }

    #[test]
    fn nan_joints_rejected() {
        let mut joints = vec![0.0; 2 * FRAME_WIDTH];
        joints[4] = f64::NAN;
        assert!(matches!(PersonTrack::new(0, joints), Err(Error::NonFinite(_))));
    }

    #[test]
    fn root_centering_zeroes_centroid() {
        let t = ramp_track(0, 3).root_centered();
        for f in 0..3 {
            for c in 0..3 {
                let s: f64 = (0..JOINTS).map(|j| t.joint(f, j)[c]).sum();
                assert!(s.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn label_names_round_trip() {
        for l in EmotionLabel::ALL {
            assert_eq!(l.name().parse::<EmotionLabel>().unwrap(), l);
            assert_eq!(EmotionLabel::from_index(l.index()).unwrap(), l);
        }
        assert!(EmotionLabel::from_index(6).is_err());
        assert_eq!("anger".parse::<EmotionLabel>().unwrap(), EmotionLabel::Angry);
    }
}
