use thiserror::Error;

use crate::optimizer::FlowTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The closed-loop matrix (or the matrix handed to a Lyapunov solver) is
    /// not Hurwitz, so the Gramians do not exist.
    #[error("system is not Hurwitz (spectral abscissa {abscissa:.6e})")]
    Unstable { abscissa: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no stabilizing controller found after {tries} random draws")]
    StabilizationNotFound { tries: usize },

    #[error("Armijo search exhausted after {max_mu} halvings")]
    ArmijoExhausted { max_mu: usize },

    #[error("flow left the stabilizing set at step {step}")]
    FlowEscaped { step: usize, trace: Box<FlowTrace> },

    #[error("all {starts} starts failed to find a stabilizing controller")]
    AllStartsFailed { starts: usize },

    #[error("parse error: {0}")]
    Parse(String),
}
