use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("no convergence after {periods} periods (last update {last_update:.3e}, norm {norm:.3e})")]
    NoConvergence {
        periods: usize,
        last_update: f64,
        norm: f64,
    },

    #[error("optimizer stalled: {0}")]
    OptimizerStall(String),

    #[error("steering contraction violated: block ratio {ratio:.6} at block {block}")]
    ContractionViolated { ratio: f64, block: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
