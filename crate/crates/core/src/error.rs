use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("duplicate identifier {0:?}")]
    DuplicateId(String),

    #[error("empty gold SFD: no defined senses in the {0} period")]
    EmptyGoldSfd(&'static str),

    #[error("no instances in the {period} period for word {word:?}")]
    EmptyPeriod { word: String, period: &'static str },

    #[error("not an embedding matrix file")]
    BadMagic,

    #[error("unsupported matrix format version {0}")]
    VersionMismatch(u32),

    #[error("truncated matrix payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value in matrix at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {0:?} has zero norm")]
    ZeroNorm(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible weights: totals {0} and {1} differ")]
    Infeasible(f64, f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instance {0:?} has zero weight")]
    ZeroWeight(String),

    #[error("concentration overflow: resultant length {0} is too close to 1")]
    ConcentrationOverflow(f64),

    #[error("degenerate von Mises-Fisher fit in the {0} period")]
    DegenerateVmf(&'static str),

    #[error("sense {0} absent from both periods")]
    SenseAbsent(u32),

    #[error("sense {0} not in the inventory")]
    UnknownSense(u32),

    #[error("no prototypes in period {0}")]
    NoPrototypes(&'static str),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("no embedding for instance {0:?}")]
    MissingEmbedding(String),

    #[error("lambda {0} not cached")]
    NotCached(f64),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
