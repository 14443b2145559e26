use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("column {column} not present in {}", .path.display())]
    MissingColumn { path: PathBuf, column: String },

    #[error("non-finite or non-numeric value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: String },

    #[error("unevenly sampled input at row {row}: spacing {found} differs from {expected}")]
    UnevenSampling {
        row: usize,
        expected: f64,
        found: f64,
    },

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("trajectory diverged at step {step}: |x| = {magnitude:e} exceeds bound {bound:e}")]
    DivergedTrajectory {
        step: usize,
        magnitude: f64,
        bound: f64,
    },

    #[error("config schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },

    #[error("series too short: need at least {required} samples, got {actual}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("series is constant; autocorrelation undefined")]
    ConstantSeries,

    #[error("fragment {start}..={end} has zero arc length")]
    ZeroLengthFragment { start: usize, end: usize },

    #[error("degenerate fragment: largest point separation {max_distance:e} is below 1e-12")]
    DegenerateFragment { max_distance: f64 },

    #[error("axis alignment failed: residual off-axis magnitude {residual:e}")]
    RankDeficientAxis { residual: f64 },

    #[error("singular transform (determinant {determinant:e})")]
    SingularTransform { determinant: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("fragments {a} and {b} overlap")]
    OverlapViolation { a: usize, b: usize },

    #[error("no fragments to select from")]
    NoFragments,

    #[error("regressor matrix is rank deficient (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed artifact {}: {message}", .path.display())]
    Artifact { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SchemaViolation { .. } | Error::PreconditionViolation(_) => ErrorClass::Usage,
            Error::DivergedTrajectory { .. }
            | Error::DegenerateFragment { .. }
            | Error::RankDeficientAxis { .. }
            | Error::SingularTransform { .. }
            | Error::RankDeficient { .. } => ErrorClass::Numerical,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
