//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input held no records at all.
    #[error("dataset contains no records")]
    EmptyDataset,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// An exhaustive check was asked to enumerate more state than its limits
    /// allow. The caller may retry with wider limits; the check never guesses.
    #[error("exhaustive check refused: {0}")]
    TooLarge(String),

    /// Random slot assignment kept violating set semantics past its retry
    /// budget. On data that passed the audit this indicates extreme bad luck;
    /// otherwise it usually means the file was edited by hand.
    #[error("reconstruction of cluster {cluster} stuck after {attempts} attempts")]
    ReconstructionStuck { cluster: usize, attempts: usize },

    /// The file parsed as JSON but does not describe a well-formed
    /// disassociated dataset (ids out of range, unsorted arrays, ...).
    #[error("structural error: {0}")]
    Structural(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
