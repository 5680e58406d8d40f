//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    #[error("speed command {commanded} m/s outside [{min}, {max}] m/s")]
    SpeedOutOfRange {
        commanded: f64,
        min: f64,
        max: f64,
    },

    #[error("inflow file error: {0}")]
    Inflow(#[from] InflowError),

    #[error("metrics undefined: {0}")]
    UndefinedMetric(String),

    #[error("observation matching horizon exceeded: {0}")]
    Horizon(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("failed to parse configuration: {0}")]
    Parse(String),
    #[error("failed to read configuration: {0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum InflowError {
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("missing header `time_s,lane,kind`")]
    Header,
    #[error("io error: {0}")]
    Io(String),
}
