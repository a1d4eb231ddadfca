use thiserror::Error;

/// Errors raised by the physics environment.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
    #[error("rejection sampling exhausted {attempts} attempts without a valid placement")]
    SamplingExhausted { attempts: usize },
    #[error("event cap of {cap} exceeded while simulating a push")]
    EventCapExceeded { cap: usize },
    #[error("input point is not a valid placement: ({x}, {y})")]
    InvalidPlacement { x: f64, y: f64 },
}

/// Errors raised by the regression backbone.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("kernel matrix factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },
    #[error("non-finite objective ({context})")]
    NonFinite { context: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("input outside the region grid range: alpha={alpha}, pos=({x}, {y})")]
    OutOfRange { alpha: f64, x: f64, y: f64 },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Failure of an active-learning run; carries the iteration it happened in.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("iteration {iter}: {source}")]
    Env { iter: usize, source: EnvError },
    #[error("iteration {iter}: {source}")]
    Model { iter: usize, source: ModelError },
    #[error("iteration {iter}: {source}")]
    Uncertainty {
        iter: usize,
        source: UncertaintyError,
    },
    #[error("invalid loop configuration: {0}")]
    Config(String),
}

impl LoopError {
    pub fn iteration(&self) -> Option<usize> {
        match self {
            LoopError::Env { iter, .. }
            | LoopError::Model { iter, .. }
            | LoopError::Uncertainty { iter, .. } => Some(*iter),
            LoopError::Config(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error("analysis error: {0}")]
    Analysis(String),
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
