use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A config field failed validation. `path` is a dotted field path such as `block.a`.
    #[error("invalid value at `{path}`: {reason}")]
    InvalidConfig { path: String, reason: String },

    #[error("malformed MoE notation {text:?}: {reason}")]
    Notation { text: String, reason: String },

    #[error("block is not representable in XeYa notation: {0}")]
    NotRepresentable(String),

    /// A transformed optimizer coefficient left its admissible range.
    #[error("{name} = {value} after transfer is outside (0, 1)")]
    OutOfRange { name: String, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn notation(text: &str, reason: impl Into<String>) -> Self {
        Error::Notation {
            text: text.to_owned(),
            reason: reason.into(),
        }
    }

    /// Prefix the field path of an `InvalidConfig` error, e.g. `a` -> `block.a`.
    pub(crate) fn under(self, prefix: &str) -> Self {
        match self {
            Error::InvalidConfig { path, reason } => Error::InvalidConfig {
                path: format!("{prefix}.{path}"),
                reason,
            },
            other => other,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
