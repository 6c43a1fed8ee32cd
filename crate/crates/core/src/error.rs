use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmcfError {
    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),

    #[error("field has {found} values but the grid has {expected} nodes")]
    SizeMismatch { expected: usize, found: usize },

    #[error("empty or degenerate domain: {0}")]
    EmptyDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph condition violated at node {node}: {detail}")]
    GraphCondition { node: usize, detail: String },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("degenerate induced metric at node {node}")]
    DegenerateMetric { node: usize },

    #[error("insufficient snapshots: {0}")]
    InsufficientSnapshots(String),

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

pub type Result<T> = std::result::Result<T, MmcfError>;
