use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse traffic pattern: {0}")]
    Parse(String),

    #[error("invalid traffic pattern: {0}")]
    InvalidPattern(String),

    #[error("unknown preset `{name}` (available: {available})")]
    UnknownPreset { name: String, available: String },

    #[error("infeasible action ({origin}, {destination}): no available car at origin")]
    InfeasibleAction { origin: usize, destination: usize },

    #[error("policy assigned probability {prob} to infeasible action index {index}")]
    PolicyMask { index: usize, prob: f64 },

    #[error("no feasible action: the available car pool is empty")]
    EmptyMask,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tape was recorded against parameter version {tape}, network is at {network}")]
    StaleTape { tape: u64, network: u64 },

    #[error("non-finite gradient in layer `{layer}`")]
    NonFiniteGradient { layer: String },

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
