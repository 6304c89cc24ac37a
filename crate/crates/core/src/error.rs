use thiserror::Error;

pub type Result<T> = std::result::Result<T, FpnError>;

#[derive(Debug, Error)]
pub enum FpnError {
    #[error("invalid state space: {0}")]
    InvalidSpace(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty marginal")]
    EmptyMarginal,

    #[error("state spaces do not match")]
    SpaceMismatch,

    #[error("uncovered parent configuration {config:?} for node {node}")]
    UncoveredParent { node: usize, config: Vec<usize> },

    #[error("invalid node-selection distribution: {0}")]
    InvalidWeights(String),

    /// Malformed input data. `line` is 1-based and counts the header.
    #[error("line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error("state space too large for dense table ({states} states, limit {limit})")]
    TooLarge { states: u128, limit: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
