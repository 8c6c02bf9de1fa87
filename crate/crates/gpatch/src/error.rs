//! Error type shared by all pipeline stages.

use crate::graph::Side;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no interactions")]
    NoInteractions,

    #[error("{side:?} index {index} out of range (count {count})")]
    IndexOutOfRange {
        side: Side,
        index: usize,
        count: usize,
    },

    #[error("cold node has no walks: {side:?} {index}")]
    ColdNodeWalk { side: Side, index: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("missing embedding for warm node {side:?} {id}")]
    MissingEmbedding { side: Side, id: String },

    #[error("missing layer representations for {side:?} {index}")]
    MissingLayerReps { side: Side, index: usize },

    #[error("missing content row for {side:?} {index}")]
    MissingContent { side: Side, index: usize },

    #[error("warm pair required: ({user}, {item}) has a cold side, route to patching branch")]
    ColdSide { user: usize, item: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("empty validation set")]
    EmptyValidation,

    #[error("empty partition: {0}")]
    EmptyPartition(String),

    #[error("requested density {requested} unreachable (max {max})")]
    DensityUnreachable { requested: f64, max: f64 },

    #[error("unknown external id {id:?} for {side:?}")]
    UnknownId { side: Side, id: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("bad file format in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("stale upstream artifact {path}: {msg} (pass --force to override)")]
    StaleArtifact { path: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for data/input problems, 3 for
    /// numeric failures. Usage errors (1) are handled by the flag parser.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
