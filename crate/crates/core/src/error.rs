use std::io;

/// Errors raised anywhere in the pipeline.
///
/// Each variant maps onto one CLI exit code (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated a documented precondition (shapes, sizes, label ranges).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numeric input lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A binary or text file did not match its documented layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    /// Training produced a non-finite loss and was stopped.
    #[error("numerical abort at step {step}: {message}")]
    NumericalAbort { step: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code: 2 contract, 3 format, 4 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) => 2,
            Error::Format { .. } => 3,
            Error::Domain(_) | Error::NumericalAbort { .. } => 4,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
