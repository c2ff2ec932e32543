use thiserror::Error;

/// Errors produced by the planning library.
#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),

    #[error("user index {index} out of range for {count} users")]
    UserIndex { index: usize, count: usize },

    /// Hover-and-fly planning needs at least `T_fly` seconds to visit every
    /// hovering location. Shorter missions are not supported.
    #[error(
        "mission period {period_s} s is shorter than the required flying time {fly_time_s} s \
         (T < T_fly is not supported)"
    )]
    PeriodTooShort { period_s: f64, fly_time_s: f64 },

    #[error("time {t} s is outside the mission period (0, {period}]")]
    TimeOutOfRange { t: f64, period: f64 },

    #[error("plan does not match scenario: {0}")]
    Mismatch(String),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PlanError>;
