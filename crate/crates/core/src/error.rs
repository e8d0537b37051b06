//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Cholesky factorization failed even after one jitter retry. Usually
    /// means lambda collapsed to ~0 or the hidden activations are degenerate.
    #[error("matrix is not positive definite (size {size}x{size}): {detail}")]
    NotPositiveDefinite { size: usize, detail: String },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward pass requires a scalar root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("non-finite gradient for {param} at iteration {iteration}")]
    NonFiniteGradient { param: String, iteration: usize },

    #[error("model has no cached output weights; call finalize before predict")]
    NotFinalized,

    #[error("batch contains a single class (mean label {mean}); loss undefined")]
    DegenerateClass { mean: f64 },

    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("no header row in {path}")]
    NoHeader { path: String },

    #[error("no data rows in {path}")]
    EmptyTable { path: String },

    #[error("no usable features remain after preprocessing")]
    NoUsableFeatures,

    #[error("classification target has a single class")]
    SingleClassTarget,

    #[error("target variance is zero; score undefined")]
    ZeroVariance,

    #[error("scores contain a single class; AUC undefined")]
    SingleClass,

    #[error("ensemble has no members")]
    EmptyEnsemble,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid model file: {0}")]
    InvalidModelFile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// Attach the iteration index at which a training run failed.
    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::Training {
            iteration,
            source: Box::new(self),
        }
    }
}
