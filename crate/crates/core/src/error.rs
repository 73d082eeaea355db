use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two fields (or a field and a table) live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Invalid parameters or geometry; the message names the offending key.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// An SAV radicand came out negative beyond roundoff.
    #[error("negative radicand {value:e} while evaluating {name}")]
    NegativeRadicand { name: &'static str, value: f64 },

    /// The dense 5x5 reduced system was numerically singular.
    #[error("singular reduced system at step {step} (|det| = {det:e}, scale = {scale:e})")]
    SingularReducedSystem { step: usize, det: f64, scale: f64 },

    /// Preconditioned CG did not reach the requested tolerance.
    #[error("PCG did not converge after {iterations} iterations (relative residual {residual:e})")]
    PcgDiverged { iterations: usize, residual: f64 },

    /// A NaN or infinity appeared in an updated field.
    #[error("non-finite value in {field} at step {step}")]
    NonFinite { field: &'static str, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A snapshot file failed its header or size checks.
    #[error("bad snapshot: {0}")]
    Snapshot(String),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that come from the numerical solve itself rather than
    /// from bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::SingularReducedSystem { .. }
                | Error::PcgDiverged { .. }
                | Error::NonFinite { .. }
                | Error::NegativeRadicand { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
