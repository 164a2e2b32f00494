use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic: expected \"CLTENSR1\"")]
    BadMagic,

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("non-finite element at index {0}")]
    NonFinite(usize),

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("label out of range: item {id:?} has label {label} but only {classes} classes")]
    LabelOutOfRange { id: String, label: usize, classes: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("dimension mismatch: {what} has {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unknown item id {0:?}")]
    UnknownItem(String),

    #[error("invalid concept set: {0}")]
    InvalidConceptSet(String),

    #[error("zero-norm concept embedding (row {0})")]
    ZeroNormConcept(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("K out of range: requested {k} of {n}")]
    SubsetOutOfRange { k: usize, n: usize },

    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),

    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("class out of range: {class} (classes: {classes})")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("concept index out of range: {index} (concepts: {concepts})")]
    ConceptOutOfRange { index: usize, concepts: usize },

    #[error("score out of range: {0} not in [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("incomplete model: {0}")]
    IncompleteModel(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("invalid synthetic config: {0}")]
    InvalidSynthConfig(String),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::IoAt { path, source }
    }
}
