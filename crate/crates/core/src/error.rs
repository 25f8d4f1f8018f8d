use thiserror::Error;

use crate::fit::FitDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input that violates an operation's precondition or a file schema rule.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("field `{field}` of `{record}`: {message}")]
    Validation {
        record: String,
        field: String,
        message: String,
    },

    #[error("frequency window too small: f_max = {f_max} MHz, support requires at least {required} MHz")]
    SupportTooSmall { f_max: f64, required: f64 },

    #[error("configuration count {count} exceeds enumeration limit {limit}")]
    TooManyConfigurations { count: u128, limit: u128 },

    #[error("time step {dt} us too coarse, use dt <= {suggested} us")]
    StepTooLarge { dt: f64, suggested: f64 },

    #[error("perturbative guard violated: |energy gap| = {gap} MHz, need > {min} MHz (too close to the ground-state anti-crossing)")]
    NearAntiCrossing { gap: f64, min: f64 },

    #[error("degenerate jacobian (condition estimate {condition:.3e})")]
    DegenerateJacobian { condition: f64 },

    #[error("fit did not converge after {} iterations", .0.iterations)]
    NoConvergence(Box<FitDiagnostics>),

    #[error("internal fault: {0}")]
    Internal(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(
        record: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            record: record.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::Validation { .. }
                | Error::SupportTooSmall { .. }
                | Error::TooManyConfigurations { .. }
                | Error::StepTooLarge { .. }
                | Error::NearAntiCrossing { .. }
                | Error::Parse { .. }
                | Error::Io(_)
        )
    }
}
