//! Binary interchange files, checkpoints and the dataset manifest.
//!
//! All integers and floats are little-endian. Strings are a `u32` byte length
//! followed by UTF-8. Readers load the whole file, check magic, version and
//! dimensions, reject trailing bytes and non-finite values, and only then
//! build the object. Writers go through a temporary file and a rename.
//!
//! | file       | layout |
//! |------------|--------|
//! | keypoints  | `MOKP`, version, clip_id, source_fps f64, p u32, f u32, `p*f*17*3` f64 |
//! | context    | `MOCX`, version, clip_id, T u32, rows u32, cols u32, `T*rows*cols` f32 |
//! | vectors    | `MOMV`, version, clip_id, person_id u32, n u32, `n*17*6` f64 |
//! | checkpoint | `MOEM`, version, config string, count u32, then per parameter: name, rank u32, dims u32, f64 values |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context::{ContextDims, ContextFeatureMap};
use crate::error::{Error, Result};
use crate::motion::{EmotionLabel, KeypointClip, MovementVectorSeq, PersonTrack, FRAME_WIDTH, JOINTS};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VERSION: u32 = 1;
pub const KEYPOINT_MAGIC: &[u8; 4] = b"MOKP";
pub const CONTEXT_MAGIC: &[u8; 4] = b"MOCX";
pub const VECTOR_MAGIC: &[u8; 4] = b"MOMV";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MOEM";

/// Writes `bytes` to `path` via a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(VERSION);
        w
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("length {v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        let found = r.take(4)?;
        if found != magic {
            return Err(r.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn err(&self, reason: String) -> Error {
        Error::format(self.path, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            self.err(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("string is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| self.err("payload size overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.err("payload size overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    /// Wraps a validation error from object construction with the path.
    fn check<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| self.err(e.to_string()))
    }
}

pub fn encode_keypoints(clip: &KeypointClip) -> Result<Vec<u8>> {
    clip.validate()?;
    let mut w = Writer::new(KEYPOINT_MAGIC);
    w.str(&clip.clip_id)?;
    w.f64(clip.source_fps);
    w.len(clip.persons.len())?;
    w.len(clip.frames())?;
    for person in &clip.persons {
        for &v in person.joints() {
            w.f64(v);
        }
    }
    Ok(w.0)
}

/// Person ids are not stored; a written clip reads back with ids `0..p`.
pub fn write_keypoints(path: &Path, clip: &KeypointClip) -> Result<()> {
    write_atomic(path, &encode_keypoints(clip)?)
}

pub fn read_keypoints(path: &Path) -> Result<KeypointClip> {
    let bytes = read_all(path)?;
    decode_keypoints(path, &bytes)
}

pub fn decode_keypoints(path: &Path, bytes: &[u8]) -> Result<KeypointClip> {
    let mut r = Reader::open(path, bytes, KEYPOINT_MAGIC)?;
    let clip_id = r.str()?;
    let source_fps = r.f64()?;
    let p = r.u32()? as usize;
    let f = r.u32()? as usize;
    if p == 0 {
        return Err(r.err(Error::EmptyPersons.to_string()));
    }
    let mut persons = Vec::with_capacity(p.min(64));
    for id in 0..p {
        let joints = r.f64s(f * FRAME_WIDTH)?;
        persons.push(r.check(PersonTrack::new(id as u32, joints))?);
    }
    r.finish()?;
    let clip = KeypointClip {
        context_ref: clip_id.clone(),
        clip_id,
        source_fps,
        persons,
        label: None,
    };
    r.check(clip.validate())?;
    Ok(clip)
}

pub fn encode_context(map: &ContextFeatureMap) -> Result<Vec<u8>> {
    let mut w = Writer::new(CONTEXT_MAGIC);
    w.str(&map.clip_id)?;
    w.len(map.frames())?;
    w.len(map.dims().rows)?;
    w.len(map.dims().cols)?;
    w.0.reserve(map.data().len() * 4);
    for &v in map.data() {
        w.f32(v);
    }
    Ok(w.0)
}

pub fn write_context(path: &Path, map: &ContextFeatureMap) -> Result<()> {
    write_atomic(path, &encode_context(map)?)
}

pub fn read_context(path: &Path) -> Result<ContextFeatureMap> {
    let bytes = read_all(path)?;
    decode_context(path, &bytes)
}

pub fn decode_context(path: &Path, bytes: &[u8]) -> Result<ContextFeatureMap> {
    let mut r = Reader::open(path, bytes, CONTEXT_MAGIC)?;
    let clip_id = r.str()?;
    let t = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if t == 0 || rows == 0 || cols == 0 {
        return Err(r.err(format!("empty context dims {t}x{rows}x{cols}")));
    }
    let n = t
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| r.err("context dims overflow".into()))?;
    let data = r.f32s(n)?;
    r.finish()?;
    r.check(ContextFeatureMap::new(clip_id, ContextDims { rows, cols }, data))
}

pub fn encode_vectors(clip_id: &str, seq: &MovementVectorSeq) -> Result<Vec<u8>> {
    let mut w = Writer::new(VECTOR_MAGIC);
    w.str(clip_id)?;
    w.u32(seq.person_id);
    w.len(seq.transitions())?;
    for &v in seq.data() {
        w.f64(v);
    }
    Ok(w.0)
}

pub fn write_vectors(path: &Path, clip_id: &str, seq: &MovementVectorSeq) -> Result<()> {
    write_atomic(path, &encode_vectors(clip_id, seq)?)
}

pub fn read_vectors(path: &Path) -> Result<(String, MovementVectorSeq)> {
    let bytes = read_all(path)?;
    let mut r = Reader::open(path, &bytes, VECTOR_MAGIC)?;
    let clip_id = r.str()?;
    let person = r.u32()?;
    let n = r.u32()? as usize;
    let data = r.f64s(n * JOINTS * 6)?;
    r.finish()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(r.err("non-finite movement vector".into()));
    }
    Ok((clip_id, r.check(MovementVectorSeq::from_raw(person, data))?))
}

/// Serializes a parameter store together with a free-form configuration
/// string. Values are stored as `f64`, which holds `f32` exactly.
pub fn encode_checkpoint<T: Scalar>(config: &str, store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    w.str(config)?;
    w.len(store.len())?;
    for p in store.iter() {
        w.str(&p.name)?;
        w.len(p.value.rank())?;
        for &d in p.value.shape() {
            w.len(d)?;
        }
        for &v in p.value.data() {
            w.f64(v.as_f64());
        }
    }
    Ok(w.0)
}

pub fn write_checkpoint<T: Scalar>(path: &Path, config: &str, store: &ParamStore<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(config, store)?)
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(String, ParamStore<T>)> {
    let bytes = read_all(path)?;
    let mut r = Reader::open(path, &bytes, CHECKPOINT_MAGIC)?;
    let config = r.str()?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(r.err(format!("parameter {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.err("parameter size overflows".into()))?;
        let values = r.f64s(n)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(r.err(format!("parameter {name} holds non-finite values")));
        }
        let tensor = r.check(Tensor::new(shape, values.into_iter().map(T::lit).collect()))?;
        r.check(store.insert(name, tensor))?;
    }
    r.finish()?;
    Ok((config, store))
}

/// Which side of the train/test split a manifest entry belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    /// Let the stratified splitter decide.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    /// Relative to the manifest's directory.
    pub keypoint_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_file: Option<PathBuf>,
    pub label: String,
    #[serde(default = "auto_split")]
    pub split: SplitTag,
}

fn auto_split() -> SplitTag {
    SplitTag::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset: String,
    #[serde(default)]
    pub clips: Vec<ClipEntry>,
}

impl Manifest {
    pub fn new(dataset: impl Into<String>) -> Self {
        Manifest {
            format_version: VERSION,
            dataset: dataset.into(),
            clips: Vec::new(),
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.format_version != VERSION {
            return Err(Error::format(path, format!("unsupported format_version {}", m.format_version)));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &m.clips {
            if !seen.insert(c.clip_id.as_str()) {
                return Err(Error::format(path, format!("duplicate clip_id {}", c.clip_id)));
            }
            c.label
                .parse::<EmotionLabel>()
                .map_err(|e| Error::format(path, format!("clip {}: {e}", c.clip_id)))?;
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip() -> KeypointClip {
        KeypointClip {
            clip_id: "walk".into(),
            source_fps: 30.0,
            persons: (0..2)
                .map(|p| PersonTrack::new(p, (0..3 * FRAME_WIDTH).map(|i| (i as f64).sin() * 1e3).collect()).unwrap())
                .collect(),
            label: None,
            context_ref: "walk".into(),
        }
    }

    #[test]
    fn keypoints_round_trip() {
        let c = clip();
        let bytes = encode_keypoints(&c).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 8 + 4 + 4 + 2 * 3 * 51 * 8);
        assert_eq!(decode_keypoints(Path::new("x"), &bytes).unwrap(), c);
    }

    #[test]
    fn every_truncation_fails() {
        let bytes = encode_keypoints(&clip()).unwrap();
        for n in 0..bytes.len() {
            assert!(decode_keypoints(Path::new("x"), &bytes[..n]).is_err(), "prefix {n}");
        }
    }

    #[test]
    fn zero_persons_rejected() {
        let mut w = Writer::new(KEYPOINT_MAGIC);
        w.str("e").unwrap();
        w.f64(4.0);
        w.u32(0);
        w.u32(16);
        assert!(decode_keypoints(Path::new("x"), &w.0).is_err());
    }

    #[test]
    fn context_round_trip() {
        let map = ContextFeatureMap::new("c", ContextDims { rows: 2, cols: 3 }, (0..12).map(|i| i as f32 * 0.1).collect()).unwrap();
        let bytes = encode_context(&map).unwrap();
        assert_eq!(decode_context(Path::new("x"), &bytes).unwrap(), map);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_context(Path::new("x"), &bad).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::new("demo");
        m.clips.push(ClipEntry {
            clip_id: "a".into(),
            keypoint_file: "keypoints/a.mokp".into(),
            context_file: Some("context/a.mocx".into()),
            label: "fear".into(),
            split: SplitTag::Test,
        });
        let text = m.to_text().unwrap();
        assert_eq!(Manifest::parse(Path::new("m"), &text).unwrap(), m);
    }
}
