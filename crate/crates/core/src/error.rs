use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record {record} in {path}: {message}")]
    Parse {
        path: PathBuf,
        record: String,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("sql error: {0}")]
    Sql(#[from] SqlError),

    #[error("interaction {interaction_id}, turn {turn_index}: {source}")]
    GoldQuery {
        interaction_id: String,
        turn_index: usize,
        #[source]
        source: SqlError,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("contextual sequence has length {length}, provider maximum is {max}")]
    SequenceTooLong { length: usize, max: usize },

    #[error("editing requested but the previous query is empty")]
    EmptyPreviousQuery,

    #[error("gold token {0} is outside the output distribution support")]
    TokenOutsideSupport(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures while tokenizing or decomposing SQL.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("unbalanced quotes starting at byte {0}")]
    UnbalancedQuote(usize),
    #[error("unbalanced parentheses")]
    UnbalancedParens,
    #[error("unexpected character {0:?} at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("cannot resolve column reference {0}")]
    UnknownColumn(String),
    #[error("cannot resolve table reference {0}")]
    UnknownTable(String),
    #[error("unexpected token {found} at position {position}, expected {expected}")]
    Unexpected {
        position: usize,
        found: String,
        expected: &'static str,
    },
    #[error("unexpected end of query, expected {0}")]
    UnexpectedEnd(&'static str),
}
