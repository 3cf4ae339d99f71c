use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimensionality mismatch: vector dim {vector} vs family dim {family}")]
    DimMismatch { vector: u32, family: u32 },

    #[error("rejected input: {0}")]
    Rejected(String),

    #[error("arena full: need {needed} bytes, {available} available")]
    ArenaFull { needed: usize, available: usize },

    #[error("corruption: {0}")]
    Corruption(String),

    #[error("config: {0}")]
    Config(String),

    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),

    #[error("engine shut down")]
    EngineDown,

    #[error("data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
