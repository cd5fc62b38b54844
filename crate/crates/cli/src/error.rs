use std::fmt::Display;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("schema version {found} does not match expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },

    #[error("trend comparison needs rows from at least two values of N, found {0}")]
    NotEnoughN(usize),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] lbstein_core::Error),
}

impl CliError {
    pub fn invalid(field: impl Into<String>, message: impl Display) -> Self {
        CliError::InvalidConfig {
            field: field.into(),
            message: message.to_string(),
        }
    }
}
