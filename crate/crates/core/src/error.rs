use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("timestep {t} outside valid range {lo}..={hi}")]
    Timestep { t: usize, lo: usize, hi: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid action: {0}")]
    Action(String),

    #[error("action provider exhausted at t={0}")]
    ProviderExhausted(usize),

    #[error("reward: {0}")]
    Reward(String),

    #[error("backward called with a cache from parameter version {cache}, current is {current}")]
    StaleCache { cache: u64, current: u64 },

    #[error("infinite KL divergence: reference assigns zero mass to category {category} of head {head}")]
    InfiniteKl { head: usize, category: usize },

    #[error("non-finite {what} at update {update}: {detail}")]
    NonFinite {
        what: &'static str,
        update: usize,
        detail: String,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("config hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status for this failure: 2 configuration, 3 corrupt or
    /// inconsistent data, 4 numeric failure, 5 unreadable or unwritable file.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schedule(_)
            | Error::Config(_)
            | Error::Action(_)
            | Error::Reward(_)
            | Error::HashMismatch { .. } => 2,
            Error::Dimension { .. }
            | Error::Timestep { .. }
            | Error::ProviderExhausted(_)
            | Error::StaleCache { .. }
            | Error::Data(_)
            | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::NonFinite { .. } | Error::InfiniteKl { .. } => 4,
            Error::Io(_) => 5,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
