use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unrecognized trigger condition `{0}`")]
    UnrecognizedCondition(String),

    #[error("no dead condition found after {attempts} attempts")]
    RejectionExhausted { attempts: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("unknown representation kind `{0}`")]
    UnknownRepresentation(String),

    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("singular vector {index} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        index: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("sample {0} owns no representation rows")]
    EmptySample(u64),

    #[error("cannot remove {count} of {n} samples")]
    RemovalTooLarge { count: usize, n: usize },

    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("missing upstream artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("config hash mismatch for {artifact}: manifest has {recorded}, current config gives {current}")]
    ConfigHashMismatch {
        artifact: String,
        recorded: String,
        current: String,
    },

    #[error("detector report carries no ground truth")]
    NoGroundTruth,

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
