use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("unknown name `{name}` for `{field}` (known: {known})")]
    UnknownName { field: String, name: String, known: String },

    #[error("{0}")]
    Core(#[from] sdde_control::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    /// A configuration value that parsed but breaks an invariant.
    pub fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Core(sdde_control::Error::Config {
            field: field.into(),
            message: message.into(),
        })
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable category printed on failure.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "config_parse",
            CliError::UnknownName { .. } => "unknown_name",
            CliError::Core(e) => e.category(),
            CliError::Io { .. } => "io",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
