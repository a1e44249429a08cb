use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("missing value in column `{column}` at data row {row}")]
    MissingValue { row: usize, column: String },

    #[error("non-numeric value `{value}` in column `{column}` at data row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-positive weight {value} at data row {row}")]
    NonPositiveWeight { row: usize, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid cost: {0}")]
    InvalidCost(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset has no response column")]
    MissingResponse,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("{what} out of range: {value} (allowed {min}..={max})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("unsupported model format version {found} (expected {expected})")]
    ModelVersion { found: u64, expected: u64 },

    #[error("malformed model file at byte {offset}: {message}")]
    ModelFormat { offset: usize, message: String },

    #[error("duplicate row id `{0}`")]
    DuplicateRowId(String),

    #[error("row id `{0}` appears in both observed and imputed inputs")]
    OverlappingRowId(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::DuplicateColumn(_) | Error::UnknownColumn(_) => "schema",
            Error::MissingValue { .. } => "missing_value",
            Error::NonNumeric { .. } => "non_numeric",
            Error::NonPositiveWeight { .. } => "non_positive_weight",
            Error::Empty(_) => "empty",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidCost(_) => "invalid_cost",
            Error::InvalidConfig(_) => "invalid_config",
            Error::MissingResponse => "missing_response",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::OutOfRange { .. } => "out_of_range",
            Error::ModelVersion { .. } => "model_version",
            Error::ModelFormat { .. } => "model_format",
            Error::DuplicateRowId(_) => "duplicate_row_id",
            Error::OverlappingRowId(_) => "overlapping_row_id",
        }
    }
}
