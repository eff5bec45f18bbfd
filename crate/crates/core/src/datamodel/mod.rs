//! Core value types shared by every other module: trajectories, search
//! configurations, trial records, and channel normalization. Everything here
//! is an immutable value after construction with bit-exact serialization.

mod config;
mod record;
mod stats;
mod trajectory;

pub use config::{
    is_known_arch_key,
    parse_config, serialize_config, ModelClass, ParamMap, ParamValue, SysIdConfiguration,
};
pub use record::{SearchLedger, TrialRecord, TrialStatus};
pub use stats::{denormalize, normalize, ChannelStats, NormalizationStats, SCALE_FLOOR};
pub use trajectory::Trajectory;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("parse error on {field}: {reason}")]
    Parse { field: String, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}
