use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RosError>;

#[derive(Debug, Error)]
pub enum RosError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training failure in {stage}: {reason}")]
    Training { stage: String, reason: String },

    #[error("parse error in {path} line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error at {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<RosError>,
    },
}

impl RosError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RosError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        RosError::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        RosError::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        RosError::Validation(msg.into())
    }

    /// Process exit code used by the `ros` binary: 2 validation, 3 training, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RosError::Training { .. } => 3,
            RosError::Io { .. } | RosError::Image { .. } | RosError::Checkpoint(_) => 4,
            RosError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
