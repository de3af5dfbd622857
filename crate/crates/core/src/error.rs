use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input data or parameters.
    #[error("validation: {0}")]
    Validation(String),

    /// A workload or trace file failed to parse. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A scheduler handed the simulator a decision it is not allowed to make.
    #[error("scheduler contract violation at stage {stage}: {msg}")]
    Contract { stage: u64, msg: String },

    /// Model training could not produce a usable tree.
    #[error("fit: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn contract(stage: u64, msg: impl Into<String>) -> Self {
        Error::Contract {
            stage,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
