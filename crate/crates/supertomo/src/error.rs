//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("string partition error: {0}")]
    Partition(String),

    #[error("negativity in string {string} at sub-iteration {sub_iteration} (component {component})")]
    MidStringNegativity {
        string: usize,
        sub_iteration: usize,
        component: usize,
    },

    #[error("corrected iterate went negative at component {component}")]
    CorrectedIterateNegative { component: usize },

    #[error("stepsize calibration failed: {0}")]
    Calibration(String),

    #[error("noise simulation failed: {0}")]
    Simulation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("campaign error: {0}")]
    Campaign(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
