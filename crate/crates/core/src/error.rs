use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite feature value at index {index}")]
    NonFiniteFeature { index: usize },

    #[error("out-of-order event: time {event_time_ms} precedes last seen {last_event_time_ms}")]
    OutOfOrderEvent {
        event_time_ms: i64,
        last_event_time_ms: i64,
    },

    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("frame built with params version {frame}, scored with version {params}")]
    VersionMismatch { frame: u64, params: u64 },

    #[error("loss {0} outside [0, 1]")]
    InvalidLoss(f64),

    #[error("metric window is empty")]
    EmptyWindow,

    #[error("no latency samples recorded")]
    NoSamples,

    #[error("audit record `{0}` has no matching truth label")]
    Join(String),

    #[error("invalid scenario field `{key}`: {reason}")]
    Scenario { key: String, reason: String },
}

impl Error {
    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    /// Name of the offending config key, when this is a config error.
    pub fn config_key(&self) -> Option<&str> {
        match self {
            Error::Config { key, .. } => Some(key),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
