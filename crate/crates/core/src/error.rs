use thiserror::Error;

/// Errors produced by lattice, loss, decoding and harness operations.
#[derive(Debug, Error)]
pub enum BrtError {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Path enumeration refused: the lattice has too many paths.
    #[error("path enumeration bound exceeded: {paths} paths > {limit}")]
    PathBoundExceeded { paths: u128, limit: u128 },
    /// Gradient-check input rejected: two gate posteriors tie at the argmax,
    /// so the bias frame is not locally constant. Resample the input.
    #[error("gate argmax tie for token {u}: top-two gates within {tol:e}")]
    TieRejected { u: usize, tol: f64 },
    /// A metric has no contributing elements.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    /// Malformed binary container.
    #[error("bad container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BrtError>;

pub(crate) fn contract(msg: impl Into<String>) -> BrtError {
    BrtError::Contract(msg.into())
}
