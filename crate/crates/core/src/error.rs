//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} must not be empty")]
    EmptyInput { what: &'static str },

    #[error("{what}: {left} entries vs {right} entries")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no valid negative attribute vector for image {image}: all candidates lie within the minimum negative distance")]
    NoValidNegative { image: usize },

    #[error("non-finite loss at epoch {epoch}, step {step} (learning rate likely too large)")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("ranking contains no relevant item")]
    NoRelevantItems,

    #[error("class {class_id} has no descriptor")]
    UnknownClass { class_id: u32 },

    #[error("need at least {needed} classes, got {got}")]
    TooFewClasses { needed: usize, got: usize },

    #[error("synthetic generation failed: {0}")]
    SynthFailed(String),

    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },

    #[error("{file}, row {row}: expected {expected} columns, got {actual}")]
    RaggedRow {
        file: String,
        row: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{file}, row {row}: value {value} outside [0, 1]")]
    ValueOutOfRange { file: String, row: usize, value: f64 },

    #[error("{file}, row {row}: {msg}")]
    ParseValue {
        file: String,
        row: usize,
        msg: String,
    },

    #[error("class {class_id} appears in both split \"{a}\" and split \"{b}\"")]
    SplitOverlap { class_id: u32, a: String, b: String },

    #[error("class {class_id} of a labelled sample appears in no split")]
    UnsplitClass { class_id: u32 },

    #[error("dataset has no split named \"{0}\"")]
    MissingSplit(String),

    #[error("unsupported model file version: {found}")]
    ModelVersion { found: String },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
