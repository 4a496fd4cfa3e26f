use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not positive definite (pivot {index} = {pivot:e} after jitter {jitter:e})")]
    NotPositiveDefinite { index: usize, pivot: f64, jitter: f64 },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("specification mismatch: {0}")]
    SpecMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("row {row}: treatment {value} is not binary")]
    NonBinaryTreatment { row: usize, value: usize },

    #[error("training diverged at epoch {epoch}: risk is not finite")]
    DivergedTraining { epoch: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("missing ground-truth column `{0}`")]
    MissingGroundTruth(&'static str),

    #[error("policy matches no factual assignment; policy risk is undefined")]
    NoMatchedRows,

    #[error("predictions are empty")]
    EmptyPredictions,

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
