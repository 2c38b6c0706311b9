use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point outside domain")]
    PointOutsideDomain,

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("leaf id {leaf} out of range for a tree with {leaves} leaves")]
    LeafOutOfRange { leaf: usize, leaves: usize },

    #[error("block size exceeds sample size (m = {m}, n = {n})")]
    BlockSizeExceedsSampleSize { m: usize, n: usize },

    #[error("degenerate model: median density vanishes everywhere")]
    DegenerateModel,

    #[error(
        "exact-dyadic quadrature needs {cells} cells, above the budget of {budget}; \
         use regular-grid quadrature instead"
    )]
    CellBudgetExceeded { cells: u128, budget: u64 },

    #[error("AUC undefined: both inliers and outliers are required")]
    AucUndefined,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("CSV parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by the caller's parameters rather than by data or I/O.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidBox(_)
                | Error::BlockSizeExceedsSampleSize { .. }
                | Error::CellBudgetExceeded { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
