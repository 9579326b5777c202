use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Shape(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input that makes the quantity undefined (zero-norm vector, all-pad targets, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite values showed up where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Divergence(_) | Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
