use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("horizontal velocity {0} m/s is too small to define a course")]
    DegenerateVelocity(f64),

    #[error("airspeed {airspeed} m/s is below the minimum {v_min} m/s")]
    InsufficientAirspeed { airspeed: f64, v_min: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("airship {airship} coincides with the subject")]
    DegenerateGeometry { airship: usize },

    #[error("limit violated: {0}")]
    LimitViolation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cost is not finite at the initial point")]
    NoProgress,

    #[error("fixed-point iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("episode log is empty")]
    EmptyLog,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
