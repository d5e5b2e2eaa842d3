//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad range, odd count, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Matrix or dataset dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The dataset structure is inconsistent (sessions, pairings, labels).
    #[error("structural error: {0}")]
    Structure(String),

    /// An operation was applied to a value in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// Input bytes do not decode as a supported file format.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// NIfTI datatype code outside the supported set.
    #[error("unsupported NIfTI datatype code {0} (supported: uint8, int16, int32, float32, float64)")]
    UnsupportedDatatype(i16),

    /// Malformed tabular or label input.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A non-finite value where a finite one is required.
    #[error("non-finite value at row {row}, column {col} of {path}")]
    NonFinite {
        path: PathBuf,
        row: usize,
        col: usize,
    },

    /// An ROI cell whose signals carry no variance.
    #[error("degenerate cell {cell}: all voxel series are constant")]
    DegenerateCell { cell: usize },

    /// A signal row with zero sample variance where correlation is required.
    #[error("degenerate signal {row_id}: constant time-series")]
    DegenerateSignal { row_id: String },

    /// The synthetic generator could not factorize its target matrix.
    #[error("degenerate cohort spec: {0}")]
    DegenerateSpec(String),

    /// Problem size exceeds what an exact algorithm can handle.
    #[error("{n} scans exceeds the exact-matching limit of {max}; use the genetic search instead")]
    SizeLimit { n: usize, max: usize },

    /// Failure while computing one entry of a pairwise distance matrix.
    #[error("distance between graphs {i} and {j}: {source}")]
    PairDistance {
        i: usize,
        j: usize,
        source: Box<Error>,
    },

    /// Failure while processing one scan of a dataset.
    #[error("scan {scan_id}: {source}")]
    Scan {
        scan_id: String,
        source: Box<Error>,
    },

    /// Failure at one point of a sweep grid.
    #[error("at time-grid point {minutes} min: {source}")]
    GridPoint {
        minutes: f64,
        source: Box<Error>,
    },

    /// Manifest content problems (unknown scans, bad references).
    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
