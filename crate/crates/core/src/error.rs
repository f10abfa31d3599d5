use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("zero vector not allowed: {0}")]
    ZeroVector(&'static str),
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("direction lies in the operator's near-null space (x^T A x = {0:e})")]
    NearNullDirection(f64),
    #[error("need {needed} conjugate directions but CG produced only {available}; raise the CG iteration count")]
    TooFewDirections { needed: usize, available: usize },
    #[error("perturbation count k must be even (symmetric sampling), got {0}")]
    OddPerturbationCount(usize),
    #[error("candidate pool too large: {subsets} subsets exceeds the 1e6 budget")]
    PoolTooLarge { subsets: u128 },
    #[error("Riccati iteration diverged; system appears non-stabilizable")]
    RiccatiDiverged,
    #[error("trajectory tag mismatch within batch: expected {expected}, got {got}")]
    TagMismatch { expected: i32, got: i32 },
    #[error("config error: {0}")]
    Config(String),
    #[error("misaligned iteration counts across runs: {0} vs {1}")]
    MisalignedRuns(usize, usize),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
