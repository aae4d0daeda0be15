use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate covariate {name:?}: max equals min, cannot place knots")]
    DegenerateCovariate { name: String },

    #[error("centering requires at least 2 rows, got {0}")]
    TooFewRows(usize),

    #[error("survival records must be sorted ascending by observed log-time")]
    UnsortedSurvival,

    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("candidate subset {mask:#b} crosses group boundaries for covariate {covariate}")]
    SubsetCrossesGroups { covariate: usize, mask: u32 },

    #[error("at most 12 datasets are supported for subset enumeration, got {0}")]
    TooManyDatasets(usize),

    #[error("no datasets provided")]
    NoDatasets,

    #[error("dataset {id:?} is empty")]
    EmptyDataset { id: String },

    #[error("datasets disagree on covariates: {0}")]
    MismatchedCovariates(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{file}, row {row}: {message}")]
    ParseRow {
        file: String,
        row: usize,
        message: String,
    },

    #[error("constant column {name:?} cannot be standardized")]
    ConstantColumn { name: String },

    #[error("censoring calibration failed: {0}")]
    CensoringCalibration(String),

    #[error("risk-group split left one group empty")]
    EmptyRiskGroup,

    #[error("dataset size {n} is smaller than the number of folds {folds}")]
    TooFewForFolds { n: usize, folds: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
