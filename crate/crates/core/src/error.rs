use thiserror::Error;

use crate::nav::RobotId;

/// Errors raised by the filter, the agent protocol and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// `H P Hᵀ + R` could not be factored. Usually a misconfigured `R` or a
    /// collapsed covariance.
    #[error("innovation covariance is numerically singular")]
    InnovationCovSingular,

    #[error("coupled covariance is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },

    #[error("range geometry is degenerate (separation {separation:.3e} m)")]
    DegenerateGeometry { separation: f64 },

    #[error("posterior covariance is singular, correlation factors left unchanged")]
    SingularPosterior,

    #[error("robot {robot} has no correlation factor toward robot {peer}")]
    MissingFactor { robot: RobotId, peer: RobotId },

    #[error("protocol violation at robot {robot}: {reason}")]
    ProtocolViolation { robot: RobotId, reason: String },

    #[error("stale message at robot {robot}: t={t} < last={last}")]
    StaleMessage { robot: RobotId, t: f64, last: f64 },

    #[error("range innovation rejected (NIS {nis:.2} > gate {gate:.2})")]
    RangeGated { nis: f64, gate: f64 },

    #[error("robot {robot} is busy with another relative update")]
    Busy { robot: RobotId },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("trace is empty")]
    EmptyTrace,

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
