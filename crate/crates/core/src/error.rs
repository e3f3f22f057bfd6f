use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Configuration is well-formed but unusable (e.g. a group nobody can open).
    #[error("configuration error: {0}")]
    Config(String),

    /// Authenticated decryption failed or derived data is inconsistent.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A persisted file does not match its format.
    #[error("corrupt {what}: {reason}")]
    Corrupt { what: String, reason: String },

    #[error("randomness source failed: {0}")]
    Randomness(String),

    /// An injected OCR or classifier backend failed.
    #[error("port failure: {0}")]
    Port(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub(crate) fn corrupt(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that indicate tampering or damaged data rather than bad input.
    pub fn is_integrity(&self) -> bool {
        matches!(self, Error::Integrity(_) | Error::Corrupt { .. })
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Config(_))
    }
}
