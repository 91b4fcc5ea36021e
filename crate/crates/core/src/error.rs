use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The symplectic integrator produced a non-finite state.
    #[error("integrator diverged at step {step}: state is not finite")]
    Divergence { step: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A simplex appears before one of its faces, or with a smaller value.
    #[error("invalid filtration: {0}")]
    InvalidFiltration(String),

    #[error("no finite persistence pair in dimension {dim}")]
    NoFinitePair { dim: usize },

    /// Bisection for an edge birth scale observed an intersection at a low
    /// scale but none at a higher one.
    #[error("birth-scale bracket inconsistent: intersecting at {lo} but not at {hi}")]
    InconsistentBracket { lo: f64, hi: f64 },

    #[error("phase must be non-decreasing: decreases at index {index}")]
    DecreasingPhase { index: usize },
}
