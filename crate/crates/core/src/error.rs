//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("action count mismatch: expected {expected}, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario catalog parse error: {0}")]
    Catalog(String),
    #[error("unknown scenario id: {0}")]
    UnknownScenario(String),
    #[error("placement failed for robot {robot} in scenario {scenario} after {attempts} attempts")]
    PlacementFailed {
        scenario: String,
        robot: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("missing forward cache for backward pass")]
    MissingCache,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("config digest mismatch: file is inconsistent")]
    DigestMismatch,
    #[error("whole-file checksum mismatch: file is corrupt")]
    ChecksumMismatch,
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite training signal at iteration {iteration}: {what}")]
    NonFinite { iteration: u64, what: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("checkpoint expects {expected} lidar beams but config has {got}")]
    BeamMismatch { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trajectory parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("replay mismatch at tick {tick}, robot {robot}: {what}")]
    Mismatch { tick: u64, robot: usize, what: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
