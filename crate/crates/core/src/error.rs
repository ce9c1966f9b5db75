use std::path::PathBuf;

/// Errors produced anywhere in the training laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A NaN or infinity showed up where only finite values are allowed.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("loss is undefined: every position is excluded by the ignore mask")]
    UndefinedLoss,

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Token annotation stream disagrees with the corpus token stream.
    #[error("annotation misaligned at token offset {offset}: {detail}")]
    Misaligned { offset: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("setup error: {0}")]
    Setup(String),

    #[error("missing runs: {}", .0.join(", "))]
    MissingRuns(Vec<String>),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
