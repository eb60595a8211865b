use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("shape mismatch in {dimension}: expected {expected}, got {actual}")]
    Shape {
        dimension: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("degenerate tracing: {0}")]
    DegenerateTracing(String),
    #[error("invalid tracing: {0}")]
    InvalidTracing(String),
    #[error("manifest error at row {row}: {message}")]
    Manifest { row: usize, message: String },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("invalid phantom configuration: {0}")]
    PhantomConfig(String),
    #[error("degenerate phantom: {0}")]
    DegeneratePhantom(String),
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("scorer failed on frame {frame}: {message}")]
    Scorer { frame: usize, message: String },
    #[error("unknown key: {0}")]
    Key(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(dimension: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            dimension,
            expected,
            actual,
        }
    }

    /// True for failures caused by degenerate numerical input rather than bad data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSeries(_) | Error::DegeneratePhantom(_)
        )
    }
}
