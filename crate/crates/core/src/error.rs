use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structure(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported sentence length {len} (need {min}..={max})")]
    Length { len: usize, min: usize, max: usize },

    #[error("symbol {symbol} out of range (grammar has {limit} symbols)")]
    Symbol { symbol: usize, limit: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling exceeded depth limit {0}")]
    DepthExceeded(usize),

    #[error(transparent)]
    Io(#[from] io::Error),
}
