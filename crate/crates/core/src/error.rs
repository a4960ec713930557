use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data violating a structural invariant; `indices` lists the
    /// offending rows, columns or entries (0-based).
    #[error("validation error: {message} (offending indices: {indices:?})")]
    Validation { message: String, indices: Vec<usize> },

    /// A factorization that should succeed for valid inputs did not.
    #[error("numerical failure: {message}")]
    Numerical { message: String, pivot: Option<usize> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>, indices: Vec<usize>) -> Self {
        Error::Validation {
            message: msg.into(),
            indices,
        }
    }
}
