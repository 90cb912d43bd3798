use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad response value {value} at row {row}: binomial responses must be 0 or 1")]
    BadResponse { row: usize, value: f64 },
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("column {column} appears in more than one group")]
    OverlappingGroups { column: usize },
    #[error("groups do not cover column {column}")]
    UncoveredColumn { column: usize },
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    GammaOutOfRange(f64),
    #[error("not enough rows for {subsets} disjoint subsets of size {b} (n = {n})")]
    NotEnoughRows { n: usize, subsets: usize, b: usize },
    #[error("total resample weight is zero")]
    ZeroWeightTotal,
    #[error("fold {fold} has no rows (K = {k}, rows = {rows})")]
    FoldTooSmall { fold: usize, k: usize, rows: usize },
    #[error("vector lengths differ: {0}")]
    LengthMismatch(String),
    #[error("truth trace must be positive")]
    ZeroTruthTrace,
    #[error("report has {report} groups but the simulation has {spec}")]
    GroupCountMismatch { report: usize, spec: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("penalty {penalty} is not supported for the {family} family in this routine")]
    Unsupported {
        penalty: &'static str,
        family: &'static str,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown level `{level}` in column `{column}`")]
    UnknownLevel { column: String, level: String },
    #[error("non-numeric value `{value}` in continuous column `{column}` (row {row})")]
    NonNumericContinuous {
        column: String,
        row: usize,
        value: String,
    },
    #[error("missing value in column `{column}` (row {row})")]
    MissingValue { column: String, row: usize },
    #[error("input file has no data rows")]
    EmptyFile,
    #[error("categorical column `{0}` has fewer than two levels")]
    TooFewLevels(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
