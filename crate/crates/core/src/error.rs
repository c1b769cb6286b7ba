use thiserror::Error;

use crate::trial::Phase;

/// Errors raised by the dose-finding engine and its numerics.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration value was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration field holds an unusable value.
    #[error("{field}: {message}")]
    Field { field: String, message: String },

    /// A probability or transform argument fell outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Skeleton calibration left the admissible region.
    #[error("skeleton calibration failed: {0}")]
    Calibration(String),

    /// Adaptive quadrature exhausted its subdivision budget.
    #[error("quadrature did not converge: estimated error {error_estimate:e} after {intervals} intervals")]
    Quadrature { intervals: usize, error_estimate: f64 },

    #[error("no observations to fit")]
    EmptyData,

    #[error("outcome {0} is not binary")]
    NonBinaryOutcome(u8),

    #[error("cohort size mismatch: expected {expected}, got {got}")]
    CohortSize { expected: usize, got: usize },

    #[error("operation requires phase {expected:?}, trial is in {actual:?}")]
    Phase { expected: Phase, actual: Phase },

    #[error("trial is not complete: {remaining} patients remaining")]
    NotFinal { remaining: usize },

    #[error("nothing to remove: no covariates are selected")]
    NothingSelected,

    /// WPS weights are undefined when every dose is equally far from target.
    #[error("cannot weight doses: all doses are equidistant from the target")]
    DegenerateWeights,

    #[error("state file: {0}")]
    StateFile(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Field { field: field.into(), message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
