use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {value} outside the range [{lo}, {hi}] of branch {branch}")]
    OutOfRange { branch: u8, value: f64, lo: f64, hi: f64 },
    #[error("regime error: {0}")]
    Regime(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("x = {x} lies outside the window [{lo}, {hi}]")]
    OutOfWindow { x: f64, lo: f64, hi: f64 },
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("no point with V = {target} found right of {from} in the window")]
    JunctionNotFound { target: f64, from: f64 },
    #[error("mismatched parameters: {0}")]
    MismatchedParams(String),
    #[error("theta = {theta} outside ({lo}, {hi})")]
    OutOfInterval { theta: f64, lo: f64, hi: f64 },
    #[error("no convergence; last values {last:?}")]
    NonConvergence { last: Vec<f64> },
    #[error("structure error: {0}")]
    Structure(String),
    #[error("inconsistent evidence: {0}")]
    InconsistentEvidence(String),
    #[error("CFL number {0} outside (0, 0.5]")]
    CflViolation(f64),
    #[error("domain too small: {0}")]
    DomainTooSmall(String),
}

pub type Result<T> = std::result::Result<T, Error>;
