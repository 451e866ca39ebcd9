use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("trajectory generation failed: {0}")]
    Trajectory(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("row {row} has no detectable path (all-zero)")]
    ZeroRow { row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset array `{array}`: {reason}")]
    DatasetArray { array: String, reason: String },
    #[error("missing data: {0}")]
    Missing(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
