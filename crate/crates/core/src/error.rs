use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    /// The two largest eigenvalues have (numerically) equal magnitude, so the
    /// dominant eigenvector is not well defined.
    #[error("ambiguous dominant eigenvalue: |λ1| = {first:e}, |λ2| = {second:e}")]
    AmbiguousDominant { first: f64, second: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size limit exceeded: {0}")]
    TooLarge(String),

    #[error("jordan structure: {0}")]
    JordanStructure(String),

    #[error("fit rejected: {0}")]
    UnstableFit(String),

    #[error("evolution aborted: {0}")]
    EvolutionAborted(String),
}

pub type Result<T> = std::result::Result<T, Error>;
