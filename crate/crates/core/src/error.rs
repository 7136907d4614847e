use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error classes map onto the CLI exit codes: configuration problems,
/// data problems (parse, shape, I/O) and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("{what} = {value} is outside [{min}, {max}]")]
    Range {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error at byte offset {offset}: {msg}")]
    Checkpoint { offset: usize, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("environment: {0}")]
    Env(String),

    #[error("{0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn parse(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) | Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}

pub(crate) fn check_range(what: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_nan() || value < min || value > max {
        return Err(Error::Range {
            what,
            value,
            min,
            max,
        });
    }
    Ok(())
}
