use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a domain invariant (non-finite entry, negative income, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// The consumer quadratic program has no feasible point.
    #[error("infeasible agent problem: {0}")]
    Infeasible(String),

    #[error("consumer {id}: {source}")]
    Consumer {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("refused: {0}")]
    Refused(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid state: {0}")]
    State(String),

    /// No strictly interior tariff exists (or none was found) for the scenario.
    #[error("scenario infeasible: {0}")]
    ScenarioInfeasible(String),

    /// A barrier term was evaluated at a point with a non-positive slack.
    #[error("iterate is not strictly interior: {0}")]
    NotInterior(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the id of the consumer that produced it.
    pub fn for_consumer(self, id: usize) -> Self {
        Error::Consumer {
            id,
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
