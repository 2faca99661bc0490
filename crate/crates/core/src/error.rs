use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not Hermitian (max |O - O^dagger| = {0:e})")]
    NotHermitian(f64),
    #[error("state norm vanished (squared norm {0:e})")]
    VanishingNorm(f64),
    #[error("density matrix trace vanished ({0:e}); time step too large for the rates")]
    VanishingTrace(f64),
    #[error("member {member} annihilated at step {step}; reduce dt")]
    MemberAnnihilated { member: usize, step: u64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("unknown noise stream {0}")]
    UnknownStream(String),
    #[error("odd-length fine increment sequence ({0})")]
    OddLength(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operator file: {0}")]
    OperatorFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code category: 2 for configuration problems, 3 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::OperatorFile(_) | Error::Json(_) | Error::InvalidDimension(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
