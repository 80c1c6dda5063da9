use thiserror::Error;

/// Errors raised by the estimator, the initialization, the simulation
/// machinery and the evaluation metrics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column {column} has {observed} observed cells, fewer than h = {h}")]
    ColumnTooSparse { column: usize, observed: usize, h: usize },

    #[error("degenerate dimensions: {0}")]
    DegenerateDimensions(String),

    #[error("non-finite value at observed cell ({row}, {col})")]
    NonFiniteValue { row: usize, col: usize },

    #[error("covariance sub-matrix is singular or ill-conditioned")]
    SingularSubmatrix,

    #[error("all eigenvalue-truncation weights are zero")]
    AllWeightsZero,

    #[error("component {component} collapsed (expected size {size:e})")]
    EmptyComponent { component: usize, size: f64 },

    #[error("too few rows for trimmed clustering: {rows} available, {needed} needed")]
    TooFewRows { rows: usize, needed: usize },

    #[error("no variable subset left enough fully reliable rows after {attempts} attempts")]
    TooFewCleanRows { attempts: usize },

    #[error("rejection sampling budget exceeded: {0}")]
    RejectionBudgetExceeded(String),

    #[error("not enough eligible cells: requested {requested}, available {available}")]
    NotEnoughCells { requested: usize, available: usize },

    #[error("unknown scenario {0}")]
    UnknownScenario(String),

    #[error("label alignment is exhaustive over G!; G = {0} exceeds the limit of 8")]
    GTooLarge(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },

    #[error("true covariance of component {0} is singular")]
    SingularTruthCovariance(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ColumnTooSparse { .. } => "ColumnTooSparse",
            Error::DegenerateDimensions(_) => "DegenerateDimensions",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::SingularSubmatrix => "SingularSubmatrix",
            Error::AllWeightsZero => "AllWeightsZero",
            Error::EmptyComponent { .. } => "EmptyComponent",
            Error::TooFewRows { .. } => "TooFewRows",
            Error::TooFewCleanRows { .. } => "TooFewCleanRows",
            Error::RejectionBudgetExceeded(_) => "RejectionBudgetExceeded",
            Error::NotEnoughCells { .. } => "NotEnoughCells",
            Error::UnknownScenario(_) => "UnknownScenario",
            Error::GTooLarge(_) => "GTooLarge",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::SingularTruthCovariance(_) => "SingularTruthCovariance",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
