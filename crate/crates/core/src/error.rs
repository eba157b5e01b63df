use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("sigma {sigma} outside [{min}, {max}]")]
    SigmaOutOfRange { sigma: f64, min: f64, max: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("corrupt image: {0}")]
    CorruptImage(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid manifest: field `{field}`: {reason}")]
    InvalidManifest { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward already called on this graph")]
    GraphConsumed,

    #[error("bad magic: not a checkpoint container")]
    BadMagic,

    #[error("architecture mismatch: checkpoint {found:016x}, expected {expected:016x}")]
    ArchitectureMismatch { expected: u64, found: u64 },

    #[error("config mismatch: checkpoint {found:016x}, expected {expected:016x}")]
    ConfigMismatch { expected: u64, found: u64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at update {update} (episode {episode})")]
    NonFiniteLoss { update: u64, episode: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidManifest { .. }
                | Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::ConfigMismatch { .. }
                | Error::ArchitectureMismatch { .. }
        )
    }
}
