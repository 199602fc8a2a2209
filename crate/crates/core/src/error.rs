use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{name}` in input file")]
    MissingColumn { name: String },

    #[error("row {row}: expected {expected} covariates, found {found}")]
    InconsistentDimension {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: target-population record (study 0) carries {field}")]
    TargetWithOutcome { row: usize, field: String },

    #[error("row {row}: trial record is missing {field}")]
    TrialMissingField { row: usize, field: String },

    #[error("row {row}: r flag inconsistent with study label")]
    InconsistentRFlag { row: usize },

    #[error("row {row}, column `{column}`: {message}")]
    InvalidField {
        row: usize,
        column: String,
        message: String,
    },

    #[error("study {study} has no usable records (need at least 2)")]
    EmptyStudy { study: usize },

    #[error("no target-population records (study 0)")]
    EmptyTarget,

    #[error("study {study} has no records in arm `{arm}`")]
    MissingArm { study: usize, arm: String },

    #[error("unknown study {study}")]
    UnknownStudy { study: usize },

    #[error("unknown treatment arm `{arm}`")]
    UnknownArm { arm: String },

    #[error("need at least {required} studies, found {found}")]
    TooFewStudies { found: usize, required: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("design matrix is rank deficient (rank {rank} of {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("need at least {required} rows to fit, found {found}")]
    InsufficientRows { found: usize, required: usize },

    #[error("logistic fit did not converge (classes appear separable)")]
    Separable,

    #[error("cannot fit probability model with an empty class")]
    EmptyClass,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("all inverse-probability weights are zero")]
    AllWeightsZero,

    #[error("moment-equation denominator is zero for the given weights")]
    DegenerateDenominator,

    #[error("too few successful bootstrap draws: {found} (need {required})")]
    TooFewDraws { found: usize, required: usize },

    #[error("{failures} of {total} replicates failed (budget is 10%)")]
    TooManyFailures { failures: usize, total: usize },

    #[error("estimation failed for study {study}, arm `{arm}`: {source}")]
    StudyArm {
        study: usize,
        arm: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by callers that map errors to exit codes:
/// problems with the input data or configuration versus failures that
/// arise while estimating from valid input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Estimation,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            MissingColumn { .. }
            | InconsistentDimension { .. }
            | TargetWithOutcome { .. }
            | TrialMissingField { .. }
            | InconsistentRFlag { .. }
            | InvalidField { .. }
            | EmptyStudy { .. }
            | EmptyTarget
            | MissingArm { .. }
            | UnknownStudy { .. }
            | UnknownArm { .. }
            | TooFewStudies { .. }
            | InvalidConfig(_)
            | Io(_)
            | Csv(_)
            | Json(_) => ErrorCategory::Input,
            StudyArm { source, .. } => source.category(),
            _ => ErrorCategory::Estimation,
        }
    }

    /// Attach study/arm context to an estimation failure.
    pub(crate) fn in_study_arm(self, study: usize, arm: &str) -> Error {
        Error::StudyArm {
            study,
            arm: arm.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
