use thiserror::Error;

/// Errors raised anywhere in the falsification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("non-binary {field} at row {row} (value {value})")]
    NonBinary {
        field: &'static str,
        row: usize,
        value: f64,
    },

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("{0} stratum empty")]
    EmptyStratum(&'static str),

    #[error("{stratum} stratum has no rows with A={arm}")]
    MissingArm { stratum: &'static str, arm: u8 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fold {fold}: out-of-fold data lacks {what}")]
    FoldComplement { fold: usize, what: &'static str },

    #[error("zero variance estimate: {0}")]
    ZeroVariance(String),

    #[error("zero witness: all witness values vanish on the query grid")]
    ZeroWitness,

    #[error("subgroup `{0}` is empty in a required stratum or arm")]
    EmptyGroup(String),

    #[error("signal kind mismatch: {0}")]
    SignalKind(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("memory guard: Gram matrices need {needed_mb} MiB, limit is {limit_mb} MiB")]
    MemoryLimit { needed_mb: u64, limit_mb: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::MissingColumn(_) => "missing-column",
            Error::NonNumeric { .. } => "non-numeric",
            Error::NonFinite { .. } => "non-finite",
            Error::NonBinary { .. } => "non-binary",
            Error::TooFewRows { .. } => "too-few-rows",
            Error::EmptyStratum(_) => "empty-stratum",
            Error::MissingArm { .. } => "missing-arm",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::FoldComplement { .. } => "fold-complement",
            Error::ZeroVariance(_) => "zero-variance",
            Error::ZeroWitness => "zero-witness",
            Error::EmptyGroup(_) => "empty-group",
            Error::SignalKind(_) => "signal-kind",
            Error::Config(_) => "config",
            Error::MemoryLimit { .. } => "memory-limit",
        }
    }
}
