use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("party {party}: inter-edge ({internal}, {external}) references an unknown external node")]
    UnknownExternal {
        party: usize,
        internal: usize,
        external: usize,
    },

    #[error("party {party}: placeholder for node {node} has no owner annotation")]
    MissingOwner { party: usize, node: usize },

    #[error("party {party}: no embedding for internal node {node}")]
    MissingEmbedding { party: usize, node: usize },

    #[error("party {party}: {reason} payload for slot (node {node}, from party {from})")]
    SlotPayload {
        party: usize,
        node: usize,
        from: usize,
        reason: &'static str,
    },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;
