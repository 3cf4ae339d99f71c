//! Benchmark and evaluation harness for the hashforest store: dataset
//! ingestion, seeded workload generation, the accuracy/overhead
//! metrics, a brute-force ground-truth oracle and two comparison arms.

pub mod baseline;
pub mod dataset;
pub mod metrics;
pub mod workload;

/// Harness-level errors, classified for the process exit code:
/// usage → 1, data → 2, storage → 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Storage(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] hashforest::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Storage(_) => 3,
            CliError::Engine(e) => match e {
                hashforest::Error::Config(_) => 1,
                hashforest::Error::Storage(_) | hashforest::Error::Corruption(_) => 3,
                _ => 2,
            },
        }
    }
}
