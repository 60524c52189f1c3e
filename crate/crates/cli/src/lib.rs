//! Library behind the `sgmc` binary: every command is callable directly.

pub mod compare;
pub mod config;
pub mod run;

pub use compare::{compare_command, CompareReport, ReferenceKind};
pub use config::{Demo, RunConfig};
pub use run::{run_command, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{0}")]
    Sampler(#[from] sgmc::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// At least one chain failed numerically; `summary.json` and partial samples were still written.
    #[error("chain {chain} failed: {source}")]
    ChainFailed { chain: usize, source: sgmc::Error },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for numeric chain failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Sampler(sgmc::Error::Config { .. }) => 2,
            CliError::ChainFailed { source, .. } if source.is_numeric() => 3,
            CliError::Sampler(e) if e.is_numeric() => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
