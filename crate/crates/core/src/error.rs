use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the explanation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate edge ({user}, {item})")]
    DuplicateEdge { user: String, item: String },

    #[error("graph has no interactions")]
    EmptyGraph,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{} user(s) have no attribute row (first: {})", users.len(), users.first().map(String::as_str).unwrap_or("-"))]
    MissingAttribute { users: Vec<String> },

    #[error("user {user} has {count} interactions, at least 3 are needed to split")]
    TooFewInteractions { user: String, count: usize },

    #[error("degenerate group: {0}")]
    DegenerateGroup(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },

    #[error("user {user} has only {available} unseen items, cannot recommend {k}")]
    KTooLarge {
        user: usize,
        k: usize,
        available: usize,
    },

    #[error("initial value {alpha} does not binarize to 1 (the initial graph must equal the original)")]
    InvalidInit { alpha: f64 },

    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("relevance vector has no positive entry")]
    NoRelevantItems,

    #[error("{kind} {index} would lose all its edges")]
    NodeEmptied { kind: &'static str, index: usize },

    #[error("batch size {batch_size} does not split {users} users into at least five partitions")]
    BatchTooLarge { batch_size: usize, users: usize },

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("all values are zero")]
    AllZero,

    #[error("group has {0} nodes, at least 4 are needed for quartiles")]
    GroupTooSmall(usize),

    #[error("no deleted edges to distribute")]
    NoDeletions,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
