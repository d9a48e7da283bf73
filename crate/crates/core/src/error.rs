use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("Cholesky factorisation failed at pivot {pivot}")]
    Factorization { pivot: usize },

    #[error("quadrature failure: eigenvalue {value:e} below -1e-12 at index {index}")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("tail tolerance {tail_tol:e} unreachable with {available} eigenvalues (discarded mass {tail_mass:e}); compute a larger spectrum")]
    TailUnreachable {
        tail_tol: f64,
        available: usize,
        tail_mass: f64,
    },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("at n = {n}: {source}")]
    AtGridPoint {
        n: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("replica {replica}: {source}")]
    Replica {
        replica: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("posterior variance {value:e} is negative beyond round-off")]
    NegativeVariance { value: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_n(n: f64, source: Error) -> Self {
        Error::AtGridPoint {
            n,
            source: Box::new(source),
        }
    }
}
