//! Persistence: the `ACTV` binary activation container, JSON-lines trajectory
//! logs and CSV report tables.
//!
//! All multi-byte integers and floats are little-endian. Writers assume a
//! single writer per file; readers may run concurrently.

mod container;
mod report;
mod trajectory;

pub use container::{
    decode_activations, encode_activations, read_activations, read_bundle, write_activations,
    write_bundle, ActivationHeader,
    ActivationMatrix, Dtype, ACTV_MAGIC, CONTAINER_VERSION,
};
pub use report::{Cell, ColumnKind, ReportTable};
pub use trajectory::{
    append_trajectory, load_trajectory, write_trajectory, StepRecord, TaskKind, TrajectoryLog,
    TrajectoryWriter,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated container: need {expected} bytes for {what}, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid header: {0}")]
    HeaderInvalid(String),
    #[error("header/payload inconsistency: {0}")]
    HeaderMismatch(String),
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("step (episode {episode}, t {t}) does not extend (episode {last_episode}, t {last_t})")]
    OrderViolation {
        episode: u64,
        t: u64,
        last_episode: u64,
        last_t: u64,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("report row {row}: {message}")]
    Report { row: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl StoreError {
    /// Stable short code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "E_IO",
            StoreError::BadMagic { .. } => "E_BAD_MAGIC",
            StoreError::VersionMismatch { .. } => "E_VERSION",
            StoreError::Truncated { .. } => "E_TRUNCATED",
            StoreError::HeaderInvalid(_) => "E_HEADER",
            StoreError::HeaderMismatch(_) => "E_HEADER_DIM",
            StoreError::NonFinite { .. } => "E_NON_FINITE",
            StoreError::OrderViolation { .. } => "E_ORDER",
            StoreError::Parse { .. } => "E_PARSE",
            StoreError::Report { .. } => "E_REPORT",
            StoreError::Csv(_) => "E_CSV",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;
