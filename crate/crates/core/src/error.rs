use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid robot spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backbone shape has no frames")]
    EmptyShape,
    #[error("damped least squares update is numerically singular (damping too small?)")]
    SingularUpdate,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("schema mismatch: expected {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },
    #[error("projection failure: nearest surface point is {distance} m away (bound {bound} m)")]
    ProjectionFailure { distance: f64, bound: f64 },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("mesh has no usable triangles")]
    EmptyMesh,
    #[error("invalid task definition: {0}")]
    InvalidTask(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
