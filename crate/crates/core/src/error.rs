use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("too few frames: need at least 2, have {0}")]
    TooFewFrames(usize),
    #[error("source rate {source_fps} Hz is below target rate {target_hz} Hz")]
    RateTooLow { source_fps: f64, target_hz: f64 },
    #[error("clip has no persons")]
    EmptyPersons,
    #[error("frame count mismatch: expected {expected}, found {found}")]
    FrameCountMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid emotion label {0}")]
    InvalidLabel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("variant {variant} cannot run on these inputs: {reason}")]
    VariantMismatch { variant: String, reason: String },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("class {class} has {count} examples, need at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that mean "the input did not validate" as opposed to
    /// an environment failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
