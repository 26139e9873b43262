use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at row {row}, column '{column}': cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("consistency error at row {row}: {message}")]
    Consistency { row: usize, message: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("fit error ({model}): {message}")]
    Fit { model: &'static str, message: String },

    #[error("degenerate smoothing window at a = {a} (h = {h})")]
    DegenerateWindow { a: f64, h: f64 },

    #[error("bandwidth selection failed: {0}")]
    Bandwidth(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation error: {0}")]
    Simulation(String),
}

impl Error {
    pub(crate) fn fit(model: &'static str, message: impl Into<String>) -> Self {
        Error::Fit {
            model,
            message: message.into(),
        }
    }

    /// Wraps the error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
