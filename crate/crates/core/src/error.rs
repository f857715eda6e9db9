use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("power series diverged or failed to converge within {terms} terms at argument {at}")]
    DivergedSeries { terms: usize, at: f64 },

    #[error("unsupported counting family: {0}")]
    UnsupportedFamily(String),

    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("restriction to a null set (mass 0) is undefined")]
    NullRestriction,

    #[error("analytic evaluation unavailable: {0}")]
    AnalyticUnavailable(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("sets are not disjoint")]
    NotDisjoint,

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("step size too large: conservation error {error:e} at t = {time}")]
    StepSize { error: f64, time: f64 },

    #[error("trajectory horizon too short: {0}")]
    Horizon(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
