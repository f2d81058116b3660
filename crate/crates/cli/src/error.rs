use std::path::PathBuf;

use volsmile_core::Error as CoreError;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Exit {
    Ok = 0,
    NonAdiabatic = 1,
    Parse = 2,
    Convergence = 3,
    NegativeDensity = 4,
    RefitFailed = 5,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{0}")]
    Input(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("constrained refit failed: {0}")]
    RefitFailed(String),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Parse { .. } | CliError::Input(_) | CliError::Io { .. } => Exit::Parse,
            CliError::RefitFailed(_) => Exit::RefitFailed,
            CliError::Core(e) => match e {
                CoreError::Domain { .. } | CoreError::Arbitrage { .. } | CoreError::GridTooCoarse { .. } => Exit::Parse,
                _ => Exit::Convergence,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
