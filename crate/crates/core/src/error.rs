use std::path::PathBuf;

use cad_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CadError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{context}: batch sizes disagree ({audio} audio, {text} text, {visual} visual)")]
    BatchMismatch {
        context: &'static str,
        audio: usize,
        text: usize,
        visual: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?} in the checkpoint but the model expects {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed dataset: {0}")]
    Dataset(String),
    #[error("stream of length {len} cannot be split into {n_cues} equal cues")]
    CueSegmentation { len: usize, n_cues: usize },
    #[error("pair sampling needs at least 2 time labels, got {0}")]
    TooFewLabels(usize),
    #[error("no question query for clip {0}")]
    MissingClipQuery(usize),
    #[error("non-finite loss at {phase} epoch {epoch} step {step}: {value}")]
    NonFiniteLoss {
        phase: &'static str,
        epoch: usize,
        step: usize,
        value: f64,
    },
    #[error("run `{run}` failed: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<CadError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CadError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CadError>;
