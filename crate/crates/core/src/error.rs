use thiserror::Error;

/// Errors produced anywhere in the workbench library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward called before a train-mode forward pass on layer `{0}`")]
    BackwardWithoutForward(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("raw mood label {0} outside 1..=5")]
    RawLabel(i64),

    #[error("malformed {modality} payload: {detail}")]
    Payload { modality: String, detail: String },

    #[error("duplicate report for user `{user}` at {timestamp}")]
    DuplicateReport { user: String, timestamp: i64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("empty shared feature intersection across {0} clients")]
    EmptyIntersection(usize),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
