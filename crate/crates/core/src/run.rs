//! Dataset directories on disk and the record written next to each run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::ContextDims;
use crate::data::{clip_samples, labels, ContextSource, Sample};
use crate::error::{Error, Result};
use crate::io::{self, ClipEntry, Manifest, SplitTag};
use crate::metrics::{stratified_split, EvalReport};
use crate::motion::{EmotionLabel, MotionConfig};
use crate::synth::SynthDataset;

/// Writes every clip as MOKP + MOCX under `dir` and returns the manifest
/// (also written as `dir/manifest.toml`). `test` lists clip indices tagged
/// for the test split.
pub fn write_synth_dataset(dir: &Path, data: &SynthDataset, test: &[usize]) -> Result<Manifest> {
    let mut manifest = Manifest::new("synthetic");
    let mut is_test = vec![false; data.clips.len()];
    for &i in test {
        is_test[i] = true;
    }
    for (clip, test) in data.clips.iter().zip(is_test) {
        let id = &clip.clip.clip_id;
        let keypoint_file = PathBuf::from("keypoints").join(format!("{id}.mokp"));
        let context_file = PathBuf::from("context").join(format!("{id}.mocx"));
        io::write_keypoints(&dir.join(&keypoint_file), &clip.clip)?;
        io::write_context(&dir.join(&context_file), &clip.context_map())?;
        manifest.clips.push(ClipEntry {
            clip_id: id.clone(),
            keypoint_file,
            context_file: Some(context_file),
            label: clip.label.name().to_string(),
            split: if test { SplitTag::Test } else { SplitTag::Train },
        });
    }
    manifest.write(&dir.join("manifest.toml"))?;
    Ok(manifest)
}

/// Per-person samples of every manifest clip with the clip's split tag.
/// Context files are read lazily, except for their headers, which are
/// checked here.
pub fn manifest_samples(
    path: &Path,
    motion: &MotionConfig,
    dims: ContextDims,
) -> Result<(Vec<Sample>, Vec<SplitTag>)> {
    let manifest = Manifest::read(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    let mut tags = Vec::new();
    for entry in &manifest.clips {
        let mut clip = io::read_keypoints(&root.join(&entry.keypoint_file))?;
        clip.clip_id = entry.clip_id.clone();
        clip.label = Some(entry.label.parse::<EmotionLabel>()?);
        let (source, frames) = match &entry.context_file {
            Some(file) => {
                let file = root.join(file);
                let map = io::read_context(&file)?;
                map.check_dims(dims)?;
                (ContextSource::File(file), Some(map.frames()))
            }
            None => (ContextSource::None, None),
        };
        for s in clip_samples(&clip, source, frames, motion)? {
            samples.push(s);
            tags.push(entry.split);
        }
    }
    Ok((samples, tags))
}

/// Indices of training and test samples. Tagged samples keep their tag;
/// `auto` samples are split per class at `fraction`.
pub fn resolve_split(
    samples: &[Sample],
    tags: &[SplitTag],
    n_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut auto = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            SplitTag::Train => train.push(i),
            SplitTag::Test => test.push(i),
            SplitTag::Auto => auto.push(i),
        }
    }
    if !auto.is_empty() {
        let auto_labels: Vec<usize> = auto.iter().map(|&i| samples[i].label).collect();
        let split = stratified_split(&auto_labels, n_classes, fraction, seed)?;
        train.extend(split.train.iter().map(|&k| auto[k]));
        test.extend(split.test.iter().map(|&k| auto[k]));
        train.sort_unstable();
        test.sort_unstable();
    }
    Ok((train, test))
}

/// Hex SHA-256 over length-prefixed parts.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a manifest and every file it references.
pub fn manifest_hash(path: &Path) -> Result<String> {
    let manifest = Manifest::read(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut blobs = vec![std::fs::read(path).map_err(|e| Error::io(path, e))?];
    for entry in &manifest.clips {
        for file in std::iter::once(&entry.keypoint_file).chain(entry.context_file.as_ref()) {
            let p = root.join(file);
            blobs.push(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    }
    Ok(content_hash(blobs.iter().map(|b| b.as_slice())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub overall_accuracy: f64,
    pub macro_f1: f64,
    pub n_examples: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub input_hash: String,
    pub checkpoint: PathBuf,
    pub metrics: RunMetrics,
    pub config: String,
}

impl RunRecord {
    pub fn new(config: &str, seed: u64, input_hash: String, checkpoint: PathBuf, report: &EvalReport, loss: &[f64]) -> Self {
        let run_id = content_hash([config.as_bytes(), input_hash.as_bytes()])[..16].to_string();
        RunRecord {
            run_id,
            seed,
            input_hash,
            checkpoint,
            metrics: RunMetrics {
                overall_accuracy: report.overall_accuracy,
                macro_f1: report.macro_f1,
                n_examples: report.n_examples,
                final_loss: loss.last().copied().unwrap_or(f64::NAN),
            },
            config: config.to_string(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        io::write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Checks one file by its extension: manifests (with every file they
/// reference), keypoints, context maps, movement vectors, checkpoints and
/// run records. Returns a one-line summary.
pub fn validate_file(path: &Path, motion: &MotionConfig, dims: Option<ContextDims>) -> Result<String> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "toml" => {
            if let Ok(record) = RunRecord::read(path) {
                return Ok(format!("run record {}", record.run_id));
            }
            let manifest = Manifest::read(path)?;
            let root = path.parent().unwrap_or(Path::new("."));
            for entry in &manifest.clips {
                let clip = io::read_keypoints(&root.join(&entry.keypoint_file))?;
                if let Some(file) = &entry.context_file {
                    let map = io::read_context(&root.join(file))?;
                    if let Some(d) = dims {
                        map.check_dims(d)?;
                    }
                    if map.frames() != clip.frames() {
                        let kept = crate::motion::resample_indices(
                            clip.frames(),
                            clip.source_fps,
                            motion.target_hz,
                            motion.max_frames,
                        );
                        if map.frames() != kept.len() {
                            return Err(Error::format(
                                root.join(file),
                                format!("{} context frames for a {}-frame clip", map.frames(), clip.frames()),
                            ));
                        }
                    }
                }
            }
            let n_labels = labels_of(&manifest)?;
            Ok(format!("manifest with {} clips over {} classes", manifest.clips.len(), n_labels))
        }
        "mokp" => {
            let c = io::read_keypoints(path)?;
            Ok(format!("keypoints {}: p={} f={}", c.clip_id, c.persons.len(), c.frames()))
        }
        "mocx" => {
            let m = io::read_context(path)?;
            if let Some(d) = dims {
                m.check_dims(d)?;
            }
            Ok(format!(
                "context {}: ({}, {}, {})",
                m.clip_id,
                m.frames(),
                m.dims().rows,
                m.dims().cols
            ))
        }
        "momv" => {
            let (id, v) = io::read_vectors(path)?;
            let (a, b, c) = v.shape();
            Ok(format!("vectors {id} person {}: ({a}, {b}, {c})", v.person_id))
        }
        "moem" => {
            let (config, store) = io::read_checkpoint::<f64>(path)?;
            let model = crate::config::model_from_text(&config)?;
            crate::model::MoEmoNet::from_store(model, store)?;
            Ok(format!("checkpoint of {}", path.display()))
        }
        _ => Err(Error::format(path, "unknown file type (expected toml, mokp, mocx, momv or moem)")),
    }
}

fn labels_of(manifest: &Manifest) -> Result<usize> {
    let mut seen = std::collections::BTreeSet::new();
    for c in &manifest.clips {
        seen.insert(c.label.parse::<EmotionLabel>()?);
    }
    Ok(seen.len())
}

/// Class counts of a sample list.
pub fn class_counts(samples: &[Sample], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for y in labels(samples) {
        counts[y] += 1;
    }
    counts
}
