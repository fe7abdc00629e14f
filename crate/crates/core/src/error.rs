use thiserror::Error;

use crate::field::Dims;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: Dims, found: Dims },

    #[error("data length {found} does not match dims (expected {expected})")]
    Length { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated {0} file")]
    Truncated(&'static str),

    #[error("non-finite loss at level {level}, iteration {iter}")]
    NonFiniteLoss { level: usize, iter: usize },

    #[error("could not draw a diffeomorphic warp after {0} attempts")]
    NotDiffeomorphic(usize),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (files, config, parameters),
    /// as opposed to failures during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::DimMismatch { .. }
                | Error::Length { .. }
                | Error::InvalidParameter(_)
                | Error::BadMagic { .. }
                | Error::Truncated(_)
                | Error::Config { .. }
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
