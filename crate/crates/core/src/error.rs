use alloc::string::String;

/// Errors raised by the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("schedule violation: {0}")]
    ScheduleViolation(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("no admissible tree")]
    NoAdmissibleTree,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("brute-force oracle refuses n = {n} (cap {cap})")]
    OracleCap { n: usize, cap: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
