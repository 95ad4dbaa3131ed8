use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The config text could not be parsed. The message carries the
    /// parser's line/column context.
    #[error("failed to parse {what}: {message}")]
    Parse { what: &'static str, message: String },

    /// A value violates a documented invariant. `field` names the offending
    /// field, prefixed with the owning entity where one exists.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
