use thiserror::Error;

pub type Result<T, E = OplError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OplError {
    #[error("input is empty")]
    EmptyInput,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    /// `row` is the 1-based data row, not counting the header.
    #[error("row {row}, column `{column}`: {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("action {0} unobserved")]
    UnobservedAction(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient design: collinear columns {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error(
        "quasi-separation in multinomial logit (|coefficient| = {max_abs:.3e} after {iterations} iterations); use a stronger ridge"
    )]
    QuasiSeparation { max_abs: f64, iterations: usize },

    #[error("cannot compare {0} and {1} values")]
    EstimatorMismatch(String, String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl OplError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        OplError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
