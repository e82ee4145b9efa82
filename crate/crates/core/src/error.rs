use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The gradient of a wrapping potential reached π/2 in norm.
    #[error("wrapping potential gradient has norm {norm} >= pi/2")]
    WrappingViolation { norm: f64 },

    #[error("degenerate Jacobian (|det| = {det:e}) at {point:?}")]
    DegenerateJacobian { det: f64, point: [f64; 3] },

    #[error("objective became non-finite ({value}) during optimization")]
    NonFiniteObjective { value: f64 },

    #[error("point {index} has zero density under every component")]
    ZeroDensity { index: usize },

    #[error("all mixture components are empty")]
    AllComponentsEmpty,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported {kind} file version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {kind} document: {message}")]
    Format { kind: &'static str, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
