// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("tensor container: {0}")]
    Container(String),

    #[error("missing tensor `{name}` (container key `{key}`)")]
    MissingTensor { name: String, key: String },

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("unsupported dtype {dtype} for tensor `{name}`")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("non-finite value in `{name}` at flat index {index}")]
    NonFinite { name: String, index: usize },

    #[error("tied embeddings declared but W_E differs from W_U transpose at [{row}, {col}] ({w_e} vs {w_u})")]
    TiedMismatch { row: usize, col: usize, w_e: f64, w_u: f64 },

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("layer {layer} has no subsequent attention layer (model has {n_layers} layers)")]
    NoSubsequentLayer { layer: usize, n_layers: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Stage {
        stage: String,
        layer: Option<usize>,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Csv {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// True for errors that originate from reading or validating a bundle.
    pub fn is_bundle_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArch(_)
                | Error::Container(_)
                | Error::MissingTensor { .. }
                | Error::ShapeMismatch { .. }
                | Error::UnsupportedDtype { .. }
                | Error::NonFinite { .. }
                | Error::TiedMismatch { .. }
                | Error::Vocab(_)
        )
    }
}
