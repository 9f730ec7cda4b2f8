use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset `{0}` is already declared on this block")]
    DuplicateDataset(String),

    #[error("invalid extent: {0}")]
    InvalidExtent(String),

    #[error("invalid loop: {0}")]
    InvalidLoop(String),

    #[error("invalid kernel expression: {0}")]
    Parse(String),

    #[error("dataset `{dataset}` holds stale host data: its download was discarded by chain {chain}")]
    StaleData { dataset: String, chain: u64 },

    #[error(
        "no tiling fits the budget of {budget} bytes (smallest achievable three-slot footprint is {min_bytes} bytes)"
    )]
    Infeasible { budget: u64, min_bytes: u64 },

    #[error("three-slot footprint of {required} bytes exceeds device capacity of {capacity} bytes")]
    Capacity { required: u64, capacity: u64 },

    #[error("command queue program deadlocks; cycle through commands {0:?}")]
    Deadlock(Vec<usize>),

    #[error("invalid command queue program: {0}")]
    InvalidProgram(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing timeline for {0}")]
    MissingTimeline(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
