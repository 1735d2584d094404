//! Crate-wide error type.

use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Variants fall into two families that the CLI maps onto exit codes:
/// validation problems (bad shapes, configs, datasets) and numerical
/// failures (domain errors, non-finite values, degenerate geometry).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op} at {count} position(s), first {positions:?}")]
    Domain {
        op: &'static str,
        count: usize,
        positions: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward seed must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("degenerate warp: {0}")]
    DegenerateWarp(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scene error: {0}")]
    Scene(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checksum mismatch for {path}: manifest {expected}, content {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numeric kind (exit code 3 in the CLI).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. }
                | Error::NonFinite { .. }
                | Error::NonScalarSeed(_)
                | Error::NonFiniteGradient(_)
                | Error::DegeneratePose(_)
                | Error::DegenerateWarp(_)
                | Error::Numerical(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
