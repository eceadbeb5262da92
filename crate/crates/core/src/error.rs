use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
///
/// Variants are grouped so a caller (the CLI in particular) can map them onto
/// a small set of failure classes: configuration, IO, validation, numeric.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("text '{text_id}': field '{field}': {message}")]
    Validation {
        text_id: String,
        field: String,
        message: String,
    },

    #[error("missing field '{field}'{}", context_suffix(.context))]
    MissingField {
        field: &'static str,
        context: Option<String>,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn missing(field: &'static str) -> Self {
        Error::MissingField {
            field,
            context: None,
        }
    }

    /// Attach a location (usually a text id) to a missing-field error.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::MissingField { field, .. } => Error::MissingField {
                field,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
