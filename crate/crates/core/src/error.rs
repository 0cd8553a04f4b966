use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A value violates a type contract (non-binary bit, non-finite entry, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("search budget exceeded: {required} candidates exceeds cap of {cap}")]
    Budget { required: u128, cap: u128 },

    /// Scenario or document validation failure. Line and column point into the
    /// source document when known.
    #[error("validation error{}: {message}", location(.line, .column))]
    Validation {
        message: String,
        line: Option<usize>,
        column: Option<usize>,
    },

    #[error("runtime abort: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location(line: &Option<usize>, column: &Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at line {l}, column {c}"),
        (Some(l), None) => format!(" at line {l}"),
        _ => String::new(),
    }
}

impl Error {
    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            message: message.into(),
            line: None,
            column: None,
        }
    }

    /// Message without the variant prefix, for nesting inside other messages.
    pub fn detail(&self) -> String {
        match self {
            Error::Runtime(m) | Error::Contract(m) | Error::Config(m) | Error::Calibration(m) => m.clone(),
            other => other.to_string(),
        }
    }

    pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                actual,
            })
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        let line = e.line();
        let column = e.column();
        Error::Validation {
            message: e.to_string(),
            line: (line > 0).then_some(line),
            column: (column > 0).then_some(column),
        }
    }
}
