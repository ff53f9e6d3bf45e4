use thiserror::Error;

/// Errors raised by the estimation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unknown term `{0}`")]
    UnknownTerm(String),

    #[error("singular innovation covariance in series {series} at row {row}")]
    SingularInnovation { series: usize, row: usize },

    #[error("inner optimisation did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    InnerNonConvergence { iterations: usize, grad_norm: f64 },

    #[error("Hessian of the penalized objective is not positive definite at the mode")]
    IndefiniteHessian,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
