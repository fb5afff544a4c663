use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty model")]
    EmptyModel,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid cluster: {0}")]
    InvalidCluster(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("unknown preset `{name}`; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient calibration: all message sizes are identical")]
    RankDeficient,

    #[error("task graph contains a cycle through tasks {0:?}")]
    Cycle(Vec<usize>),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("chunk coverage error: {0}")]
    Coverage(String),

    #[error("replica divergence: {0}")]
    ReplicaDivergence(String),

    #[error("inconsistent noise-free observations at x = {0}")]
    InconsistentObservations(f64),

    #[error("objective failed {consecutive} consecutive times; last error: {last}")]
    ObjectiveFailed { consecutive: usize, last: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
