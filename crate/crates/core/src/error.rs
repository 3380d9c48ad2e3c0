use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed line-oriented text (grammar files, bias files, vocabularies).
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Malformed bracketed tree.
    #[error("byte {offset}: {msg}")]
    Bracket { offset: usize, msg: String },

    /// Inputs that do not line up with each other (trees vs sentences, bias vs corpus).
    #[error("alignment error at line {line}: {msg}")]
    Alignment { line: usize, msg: String },

    /// A sentence (or a whole corpus) has zero probability under the weighted tree measure.
    #[error("sentence has zero measure{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    ZeroMeasure { context: Option<String> },

    /// Invalid numeric or structural parameter.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Input value outside the domain of an operation.
    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub(crate) fn zero_measure() -> Self {
        Error::ZeroMeasure { context: None }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
