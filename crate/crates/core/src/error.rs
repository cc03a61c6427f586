use thiserror::Error;

/// Errors raised by the model, solvers and verification harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A formula was evaluated outside its domain (square root of a negative, etc).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid model or solver configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An eigenvalue of a mean-field operator came too close to zero.
    #[error("gap collapse: eigenvalue {value:e} inside (-{threshold:e}, {threshold:e})")]
    GapCollapse { value: f64, threshold: f64 },

    /// A cross-gap eigenvalue pair is numerically degenerate.
    #[error("degenerate cross-gap pair: |mu_i - mu_j| = {separation:e} below {threshold:e}")]
    DegeneratePair { separation: f64, threshold: f64 },

    /// Fixed-point iteration of the retraction did not reach tolerance.
    #[error("retraction did not converge after {} steps (last residual {:e})", .0.n_steps, .0.last_residual())]
    RetractionDiverged(Box<crate::retraction::RetractionTrace>),

    /// A solver exhausted its iteration budget.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The requested electron count does not fit the discretization.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    /// An operation was called with inputs violating its precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A scaling fit had too few usable points after floor censoring.
    #[error("too few points for a fit: {usable} usable of {total} (need {needed})")]
    TooFewPoints {
        usable: usize,
        total: usize,
        needed: usize,
    },

    #[error("malformed dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
