use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layout error: {0}")]
    Layout(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("numeric failure{}: {what}", .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numeric { iteration: Option<usize>, what: String },

    #[error("state error: {0}")]
    State(String),

    #[error("configuration error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("schedule exhausted after {0} iterations")]
    ScheduleExhausted(usize),

    #[error("sample store error: {0}")]
    Store(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn numeric(what: impl Into<String>) -> Self {
        Error::Numeric {
            iteration: None,
            what: what.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach an iteration index to a numeric failure raised deeper in the stack.
    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Numeric { iteration: None, what } => Error::Numeric {
                iteration: Some(iteration),
                what,
            },
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite {what}")))
    }
}
