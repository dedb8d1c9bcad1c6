use thiserror::Error;

/// Errors surfaced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing covariate data for subject {0}")]
    MissingCovariate(String),

    #[error("design matrix is rank deficient; dependent columns: {0:?}")]
    SingularDesign(Vec<usize>),

    #[error("underdetermined system: {rows} rows for {cols} columns")]
    Underdetermined { rows: usize, cols: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("nesting violation: full log-likelihood {full} is below reduced {reduced}")]
    NestingViolation { full: f64, reduced: f64 },

    #[error("insufficient data in {0}")]
    InsufficientData(String),

    #[error("unknown lab name: {0}")]
    UnknownLab(String),

    #[error("insufficient controls in month {month}: need {needed}, have {available}")]
    InsufficientControls {
        month: String,
        needed: usize,
        available: usize,
    },

    #[error("knot scan failed: every candidate model fit failed")]
    ScanFailure,

    #[error("labels contain a single class")]
    DegenerateLabels,

    #[error("score vectors are not paired on the same subjects")]
    PairingMismatch,

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("configuration error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for data problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularDesign(_)
            | Error::Underdetermined { .. }
            | Error::Domain(_)
            | Error::NestingViolation { .. }
            | Error::ScanFailure
            | Error::DegenerateLabels => 3,
            _ => 2,
        }
    }
}
