use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("zero-area image")]
    ZeroArea,

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("invalid image buffer: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("intensity must be a finite value in [0, 1], got {0}")]
    InvalidIntensity(f64),

    #[error("unknown perturbation id `{0}`")]
    UnknownPerturbation(String),

    #[error("unknown modality `{0}`")]
    UnknownModality(String),

    #[error("severity level must be in 1..=5, got {0}")]
    InvalidLevel(u8),

    #[error("perturbation `{kind}` does not apply to modality {modality}")]
    ModalityMismatch { kind: String, modality: String },

    #[error("max_iterations must be at least 1")]
    InvalidIterationCap,

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no records for category {category} at level {level}")]
    EmptyGroup { category: String, level: u8 },

    #[error("missing clean baseline for {0}")]
    MissingBaseline(String),

    #[error("mismatched grouping keys: {0}")]
    MismatchedKeys(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("manifest validation failed: {0}")]
    Validation(String),

    #[error("calibration cache error: {0}")]
    Cache(String),

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by malformed user input rather than a runtime
    /// failure. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::DuplicateSample(_)
                | Error::InvalidRecord(_)
                | Error::MissingBaseline(_)
                | Error::MismatchedKeys(_)
                | Error::UnknownPerturbation(_)
                | Error::UnknownModality(_)
                | Error::InvalidLevel(_)
                | Error::ModalityMismatch { .. }
                | Error::InvalidBox(_)
        )
    }
}
