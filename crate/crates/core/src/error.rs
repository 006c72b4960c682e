use alloc::string::String;

/// Errors raised by the positioning core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no ephemeris for PRN {prn}")]
    EphemerisNotFound { prn: u8 },
    #[error("ephemeris for PRN {prn} is stale ({age_s:.0} s from toe)")]
    StaleEphemeris { prn: u8, age_s: f64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("insufficient observations: have {have}, need {need}")]
    InsufficientObservations { have: usize, need: usize },
    #[error("snapshot generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
