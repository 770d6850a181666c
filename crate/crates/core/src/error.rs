use thiserror::Error;

/// Errors raised by the simulation, functional and controller layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("theta = {theta} lies outside the delay window [-{delay}, 0]")]
    Range { theta: f64, delay: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("numeric blow-up at step {step}: {message}")]
    Blowup { step: usize, message: String },

    #[error("safe-set violation: h = {h}")]
    SafeSetViolation { h: f64 },

    #[error("transversality condition violated: |G|^2 = {norm_sq:e} <= {tol:e}")]
    Transversality { norm_sq: f64, tol: f64 },

    #[error("sampling error: {0}")]
    Sampling(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Domain(_) => "domain",
            Error::Range { .. } => "range",
            Error::Numeric(_) => "numeric",
            Error::Blowup { .. } => "blowup",
            Error::SafeSetViolation { .. } => "safe_set_violation",
            Error::Transversality { .. } => "transversality",
            Error::Sampling(_) => "sampling",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
