use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} expects {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },

    #[error("empty neighborhood: {0}")]
    EmptyNeighborhood(String),

    #[error("agent {agent_id}: history too short ({available} of {required} steps)")]
    Truncation {
        agent_id: u64,
        available: usize,
        required: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mask error: {0}")]
    Mask(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("metadata error in {path}: {message}")]
    Metadata { path: PathBuf, message: String },

    #[error("incompatible parameter file: {0}")]
    Compatibility(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("horizon step {step} out of range (horizon {horizon})")]
    Range { step: usize, horizon: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingFailure { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
