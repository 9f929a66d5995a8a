use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// The variants are coarse on purpose: the CLI maps each family to its own
/// exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("layer {index} ({name}): {message}")]
    Layer {
        index: usize,
        name: String,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Idx { path: PathBuf, message: String },

    #[error("missing data files in {}: {}", dir.display(), missing.join(", "))]
    MissingData { dir: PathBuf, missing: Vec<String> },

    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("no candidate reaches accuracy {threshold}; best found {best_accuracy} ({best_id})")]
    Infeasible {
        threshold: f64,
        best_accuracy: f64,
        best_id: String,
    },

    #[error("container format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
