use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown class directory `{0}`")]
    UnknownClass(String),

    #[error("empty dataset{0}")]
    EmptyDataset(String),

    #[error("model `{0}` is not trained")]
    Untrained(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed {what}: {detail}")]
    Format {
        path: PathBuf,
        what: &'static str,
        detail: String,
    },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("missing artifact {path}; run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("{member} failed: {source}")]
    Member {
        member: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short stable identifier, used by the CLI and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidArgument(_) | Error::LabelOutOfRange { .. } => "invalid_argument",
            Error::Config(_) => "config",
            Error::UnknownClass(_) => "unknown_class",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::Untrained(_) => "untrained",
            Error::Io { .. } => "io",
            Error::Format { .. } | Error::CheckpointVersion { .. } => "format",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Member { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn member(member: &'static str, source: Error) -> Self {
        Error::Member {
            member,
            source: Box::new(source),
        }
    }
}
