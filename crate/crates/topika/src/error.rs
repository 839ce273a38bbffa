use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("entry count mismatch: header declares {declared} entries, found {found}")]
    EntryCountMismatch { declared: usize, found: usize },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("requested split sizes (test {test} + validation {validation}) leave no training documents out of {docs}")]
    SplitTooLarge {
        test: usize,
        validation: usize,
        docs: usize,
    },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero predictive probability for word {word} in document {doc}")]
    ZeroProbability { doc: usize, word: usize },

    #[error("held-out set contains no tokens")]
    EmptyHeldout,

    #[error("enumeration too large: {topics}^{tokens} configurations exceeds {limit}")]
    EnumerationTooLarge {
        topics: usize,
        tokens: usize,
        limit: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
