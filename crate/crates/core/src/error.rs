use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("class index {index} outside catalog of {n_classes} classes")]
    ClassCatalog { index: usize, n_classes: usize },

    #[error("insufficient points: need {needed} distinct points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("model version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("model checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
