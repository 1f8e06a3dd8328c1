use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid offspring distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("node with {degree} children exceeds maximum offspring count W={width}")]
    DegreeExceedsWidth { degree: usize, width: usize },

    #[error("empty sample: no node was observed")]
    EmptySample,

    #[error("capacity exceeded for (L={height}, W={width}): {count} non-isomorphic trees, budget is {budget}")]
    Capacity {
        height: usize,
        width: usize,
        count: String,
        budget: usize,
    },

    #[error("sample inconsistent with (L={height}, W={width}): {reason}")]
    InconsistentSample {
        height: usize,
        width: usize,
        reason: String,
    },

    #[error("insufficient pilot run: {len} values, at least {n_min} required")]
    InsufficientPilot { len: usize, n_min: usize },

    #[error("no internal nodes in the top {levels} level(s) of the sample")]
    NoInternalNodes { levels: usize },

    #[error("optimizer failed from every start")]
    AllStartsFailed,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
