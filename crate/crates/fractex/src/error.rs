use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{axis} index out of range: triplet #{position} ({row}, {col}) in a {n_rows}x{n_cols} matrix")]
    IndexOutOfRange {
        axis: &'static str,
        position: usize,
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("malformed matrix: {0}")]
    Malformed(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input")]
    EmptyInput,

    #[error("user {user} has fewer than 2 distinct timestamps; filter before splitting")]
    SplitPrecondition { user: String },

    #[error("rank {k} out of range for a {n_rows}x{n_cols} matrix")]
    RankOutOfRange { k: usize, n_rows: usize, n_cols: usize },

    #[error("subspace iteration degenerated: {0}")]
    Convergence(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error(
        "matrix is singular to working precision (eigenvalue {eigenvalue:e} <= {threshold:e}); try a smaller rank"
    )]
    Singular { eigenvalue: f64, threshold: f64 },

    #[error("cannot resize {from_rows}x{from_cols} up to {to_rows}x{to_cols}; only down-scaling is supported")]
    Upscale {
        from_rows: usize,
        from_cols: usize,
        to_rows: usize,
        to_cols: usize,
    },

    #[error("reduced size {m_prime}x{n_prime} must be strictly smaller than {n_rows}x{n_cols}")]
    NotAReduction {
        m_prime: usize,
        n_prime: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("degenerate value range: all entries equal {0}")]
    DegenerateRange(f64),

    #[error("keep probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("train and test supports overlap at ({row}, {col})")]
    OverlappingSupports { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shard write failed after {written} of {total} shards: {source}")]
    PartialOutput {
        written: usize,
        total: usize,
        manifest: Box<crate::expander::ExpansionManifest>,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
