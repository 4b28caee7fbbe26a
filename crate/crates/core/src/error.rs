use thiserror::Error;

/// Errors surfaced by the library. Configuration problems (bad shapes, missing
/// corpora, malformed configs) are separated from runtime failures so the CLI
/// can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("sequence too long: {got} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { got: usize, max: usize },

    #[error("stage sequencing error: {0}")]
    Sequencing(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("corpus format error: {0}")]
    Corpus(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Argument(_) | Error::SequenceTooLong { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
