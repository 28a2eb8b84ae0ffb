use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Integration step outside `(0, max]`; usually a timestamp gap in the IMU stream.
    #[error("invalid integration step dt = {dt} s (allowed range (0, {max}])")]
    InvalidStep { dt: f64, max: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Injected orientation error exceeded π; the caller should reinitialise the filter.
    #[error("filter divergence: {0}")]
    Divergence(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("no timestamp pairs within the association window")]
    EmptyAssociation,

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Data,
    Config,
    Numerical,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Data => 2,
            ErrorCategory::Config => 3,
            ErrorCategory::Numerical => 4,
            ErrorCategory::Io => 5,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Numerical(_) | Error::Divergence(_) | Error::DegenerateAlignment(_) => {
                ErrorCategory::Numerical
            }
            Error::Io { .. } => ErrorCategory::Io,
            Error::InvalidInput(_)
            | Error::InvalidStep { .. }
            | Error::InsufficientData(_)
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::EmptyAssociation => ErrorCategory::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
