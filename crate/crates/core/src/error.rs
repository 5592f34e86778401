use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("path delay {delay:.3e} s exceeds the tap window of {window:.3e} s")]
    Truncation { delay: f64, window: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user configuration rather than data or I/O.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Parameter(_) | Error::Toml(_))
    }

    /// True for errors caused by malformed or unusable input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::Parse { .. }
                | Error::Shape { .. }
                | Error::Stratification(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
