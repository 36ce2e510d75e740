use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    ConfigViolations(Vec<String>),

    #[error("non-finite value in {0}")]
    NumericInput(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("sampling diverged at step t={step}")]
    SamplingDiverged { step: usize },

    #[error("measurement payload error: {0}")]
    Payload(String),

    #[error("unsupported layer {layer}: {reason}")]
    UnsupportedLayer { layer: usize, reason: String },

    #[error("eigendecomposition failed for layer {0}")]
    Eigen(usize),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("oracle-scale guard: {0}")]
    OracleScale(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
