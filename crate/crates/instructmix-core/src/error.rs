//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the data and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A record file line did not conform to the record schema.
    #[error("{dataset}: line {line}: {message}")]
    Schema {
        dataset: String,
        line: usize,
        message: String,
    },

    /// Loaded data violated a dataset or registry invariant.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Template source text could not be parsed.
    #[error("template parse error at offset {offset}: {message}")]
    TemplateParse { offset: usize, message: String },

    /// A template placeholder had no matching field at render time.
    #[error("template {template_id}: no field named `{placeholder}`")]
    TemplateBind {
        template_id: String,
        placeholder: String,
    },

    /// A cluster name not present in the registry.
    #[error("unknown cluster `{0}`")]
    UnknownCluster(String),

    /// A packed batch failed its structural invariants.
    #[error("packed batch integrity violation: {0}")]
    Integrity(String),

    /// The scoring backend failed for a dataset/template combination.
    #[error("scorer failure on {dataset} template {template_id}: {message}")]
    Scorer {
        dataset: String,
        template_id: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
