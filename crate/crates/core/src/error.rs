use thiserror::Error;

/// Errors raised by the laboratory. Numerical aborts are kept separate from
/// configuration problems so callers can map them to different exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field violates the reality condition (max asymmetry {0:e})")]
    RealityViolation(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("blow-up at step {step}: enstrophy {enstrophy:e}")]
    BlowUp { step: u64, enstrophy: f64 },
    #[error("time grid mismatch: {0}")]
    TimeGridMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("measures are not equivalent: {0}")]
    NotEquivalent(String),
    #[error("shared-input contract violated: {0}")]
    SharedInputMismatch(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::BlowUp { .. } | Error::SharedInputMismatch(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
