use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Argument outside the domain of a mathematical function.
    #[error("{func}: argument out of domain ({detail})")]
    Domain { func: &'static str, detail: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// A solver produced NaN or infinity; `trace` holds the relative changes
    /// of the iterations completed before the failure.
    #[error("{solver}: non-finite value at iteration {iteration} ({detail})")]
    NonFinite {
        solver: &'static str,
        iteration: usize,
        detail: String,
        trace: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(func: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        func,
        detail: detail.into(),
    }
}
