use thiserror::Error;

/// Domain errors. The message names the offending parameter.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("code does not fit: {0}")]
    DoesNotFit(String),
    #[error("not enough usable points for regression: need 3, have {0}")]
    TooFewPoints(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
