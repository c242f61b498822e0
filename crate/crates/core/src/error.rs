use thiserror::Error;

/// Errors raised across ingestion, matching, estimation and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no rows")]
    NoRows,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("trajectory {id}: duplicate time {time}")]
    DuplicateTime { id: String, time: i64 },

    #[error("trajectory {id}: z must increment by 1 (found {found} after {previous})")]
    ZSequence { id: String, previous: u32, found: u32 },

    #[error("trajectory {id}: treated at time {treatment_time}, inside the burn-in of length {burn_in}")]
    BurnIn {
        id: String,
        treatment_time: i64,
        burn_in: usize,
    },

    #[error("trajectory {id}: insufficient history at time {time} for lag {lag}")]
    InsufficientHistory { id: String, time: i64, lag: usize },

    #[error("unknown trajectory `{0}`")]
    UnknownTrajectory(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("singular scaling: {0}")]
    SingularScaling(String),

    #[error("infeasible: treated {0}")]
    InfeasibleTreated(String),

    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    #[error("too few control instances: need at least {needed}, found {found}")]
    TooFewControls { needed: usize, found: usize },

    #[error("all-constant design: no covariate column carries variation")]
    ConstantDesign,

    #[error("rank-deficient regression design")]
    RankDeficient,

    #[error("zero total weight")]
    ZeroWeight,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("design does not belong to this dataset: {0}")]
    DesignMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that mean a matched design cannot be built, as opposed
    /// to malformed input.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::InfeasibleTreated(_) | Error::InfeasibleDesign(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
