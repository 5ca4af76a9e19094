use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid direction vector ({x}, {y}, {z}): norm {norm} is not 1")]
    InvalidVector { x: f64, y: f64, z: f64, norm: f64 },
    #[error("unknown rotation convention `{0}`")]
    UnknownConvention(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("subject must not be empty")]
    EmptySubject,
    #[error("no direction keywords in `{0}`")]
    Unparseable(String),
    #[error("phrase table: {0}")]
    PhraseTable(String),
    #[error("i/o error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("record {index} rejected: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("unsupported dataset format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("malformed dataset header: {0}")]
    Header(String),
    #[error("output {0} already exists")]
    Exists(PathBuf),
}

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("projected face leaves the {width}x{height} canvas (point at u={u:.1}, v={v:.1})")]
    OutOfFrame { width: u32, height: u32, u: f64, v: f64 },
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid head asset: {0}")]
    Asset(String),
    #[error("image format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("anchor token `{0}` missing from vocabulary")]
    AnchorMissing(String),
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("timestep {t} out of range 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("{steps} sampling steps exceed the {max}-step schedule")]
    TooManySteps { steps: usize, max: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint tensor `{name}`: {detail}")]
    Tensor { name: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no test records")]
    Empty,
    #[error("ablation needs at least two configurations, got {0}")]
    TooFewConfigs(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}
