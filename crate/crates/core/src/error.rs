use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("non-finite value at {context}")]
    NonFinite { context: String },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e}): {context}")]
    NoConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("monotonicity violated: {0}")]
    NonMonotone(String),

    #[error("numerical instability: {0}")]
    Unstable(String),

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("unreachable: {0}")]
    Unreachable(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NoConvergence { .. }
                | Error::NonMonotone(_)
                | Error::Unstable(_)
                | Error::BoundViolation(_)
                | Error::Unreachable(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
