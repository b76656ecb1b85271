//! Crate-wide error type.

use thiserror::Error;

/// Loss component names, used when a composite loss turns non-finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossComponent {
    /// Beta-weighted Gaussian negative log-likelihood.
    Nll,
    /// Error-weighted variance penalty.
    Penalty,
    /// Similarity alignment loss.
    Alignment,
}

impl std::fmt::Display for LossComponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossComponent::Nll => write!(f, "nll"),
            LossComponent::Penalty => write!(f, "pen"),
            LossComponent::Alignment => write!(f, "align"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied values failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Correlations are undefined on zero-variance input; RMSE is still
    /// computable and carried here so callers can report it.
    #[error("correlation undefined: zero variance in {which} (rmse={rmse})")]
    CorrelationUndefined { which: &'static str, rmse: f64 },

    /// Both samples of a two-sample test have zero variance.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A loss component evaluated to NaN or infinity.
    #[error("non-finite loss in component `{component}` (value {value})")]
    NonFiniteLoss { component: LossComponent, value: f64 },

    /// Dataset file problems, with row-level detail where available.
    #[error("data error: {0}")]
    Data(String),

    /// Run/training configuration rejected before any work started.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint could not be read back (corrupt, wrong version, or
    /// config mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
