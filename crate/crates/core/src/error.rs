use std::path::PathBuf;

use crate::region::Region;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed arguments, manifests or config files.
    Input,
    /// Data that is well-formed but unusable (missing patches, one class, ...).
    Data,
    /// Model file problems: version, checksum, truncation.
    Model,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("missing region `{0}` in training data")]
    MissingRegion(Region),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("patch {}: {msg}", path.display())]
    Patch { path: PathBuf, msg: String },

    #[error("tensor file: {0}")]
    TensorFormat(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("checksum mismatch in section `{0}`")]
    Checksum(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Manifest { .. } | Error::Config(_) => ErrorKind::Input,
            Error::ModelFormat(_) | Error::UnsupportedVersion { .. } | Error::Checksum(_) => {
                ErrorKind::Model
            }
            Error::Io { .. } => ErrorKind::Input,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
