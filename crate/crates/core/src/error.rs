use thiserror::Error;

/// Errors surfaced by the allocation and outage routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the routine.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector lengths or stream counts do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The high-SNR closed form produced a non-positive leading power
    /// and is not usable at the requested operating point.
    #[error("closed form outside its validity region: {0}")]
    InfeasibleClosedForm(String),

    /// An iterative solver exhausted its iteration budget.
    #[error("solver failed to converge: {0}")]
    NonConvergence(String),

    /// A root finder could not bracket a sign change.
    #[error("bracketing failure: {0}")]
    Bracketing(String),

    /// The constraint set is empty for the requested targets.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    /// Invalid system configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
