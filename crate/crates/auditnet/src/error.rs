use crate::wire::ErrorCode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ebtree_core::Error),
    #[error("transport: {0}")]
    Transport(String),
    #[error("server replied {code}: {detail}")]
    Remote { code: ErrorCode, detail: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    /// The wire code a server reports for this error.
    pub fn code(&self) -> ErrorCode {
        use ebtree_core::Error as C;
        match self {
            Error::Core(C::Range { .. }) => ErrorCode::Range,
            Error::Core(C::Conflict { .. }) => ErrorCode::Conflict,
            // Unreadable or inconsistent stored data: the requested content
            // cannot be produced.
            Error::Core(C::NotFound(_) | C::Corrupt(_) | C::Integrity(_) | C::Io(_)) => ErrorCode::NotFound,
            Error::Core(C::Codec(_) | C::Contract(_) | C::Config(_)) => ErrorCode::Malformed,
            Error::Remote { code, .. } => *code,
            Error::Transport(_) | Error::Protocol(_) | Error::Verification(_) => ErrorCode::Malformed,
        }
    }
}
