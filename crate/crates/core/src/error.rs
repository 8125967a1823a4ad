use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("position {pos} out of range 1..={max}")]
    Range { pos: u64, max: u64 },
    #[error("codec error: {0}")]
    Codec(String),
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: expected version {expected}, latest is {latest}")]
    Conflict { expected: u64, latest: u64 },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn range(pos: u64, max: u64) -> Self {
        Error::Range { pos, max }
    }
}
