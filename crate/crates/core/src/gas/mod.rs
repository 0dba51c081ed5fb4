//! Network-station gas model: data schema, fixtures and the time-expanded
//! MILP builder.

pub mod build;
pub mod fixtures;
pub mod network;

pub use build::{build_instance_milp, compute_pipe_velocities};
pub use network::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GasError {
    #[error("missing forecast: {0}")]
    MissingForecast(String),
    #[error("nonpositive pressure {1} at node `{0}`")]
    NonpositivePressure(String, f64),
    #[error("valve `{0}` needs finite pressure and flow bounds")]
    UnboundedBigM(String),
    #[error("unknown operation mode `{0}`")]
    UnknownMode(String),
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Milp(#[from] crate::milp::MilpError),
}
