use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum BridgeError {
    /// An argument lies outside the domain of the operation (negative time,
    /// unsorted grid, time past the pinning point, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A mathematical precondition of a Bayes formula does not hold,
    /// e.g. `F(t) = 0` in the pinned branch.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Quadrature failed to converge, a normalizer underflowed, or a value
    /// became non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Observations describe an event of probability zero under the model.
    #[error("inconsistent observations: {0}")]
    Inconsistent(String),

    /// Internal invariants of a path or model were found broken.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A Monte Carlo oracle retained too few samples to report anything.
    #[error("insufficient sample: retained {retained} paths, need at least {needed} (increase n_paths or h)")]
    InsufficientSample { retained: usize, needed: usize },

    /// Invalid configuration or input file.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = BridgeError> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(BridgeError::Domain(msg.into()))
}
