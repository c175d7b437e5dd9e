use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature did not converge: estimate {value:e}, error {abs_err:e} after {subdivisions} subdivisions")]
    Quadrature {
        value: f64,
        abs_err: f64,
        subdivisions: usize,
    },

    #[error("factorization failed at jitter {jitter:e}: {reason}")]
    Factorization { jitter: f64, reason: String },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("epsilon ladder is empty")]
    EmptyLadder,

    #[error("sample grid does not contain the requested points: {0}")]
    GridMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("grid of {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
