use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape has no points")]
    EmptyShape,
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("concentration must be non-negative and finite, got {0}")]
    InvalidConcentration(f64),
    #[error("unsupported dimension {0}")]
    InvalidDimension(usize),
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionError { expected: usize, found: usize },
    #[error("singular Jacobian at point {index} (|det J| = {det:e})")]
    SingularJacobian { index: usize, det: f64 },
    #[error("transform family mismatch: {0}")]
    FamilyMismatch(String),
    #[error("control grids differ between transforms")]
    GridMismatch,
    #[error("cost family requires normals on both shapes")]
    MissingNormals,
    #[error("degenerate curve: consecutive points {0} and {1} coincide")]
    DegenerateCurve(usize, usize),
    #[error("need more than {k} points for {k}-neighbour estimation, got {n}")]
    InsufficientPoints { n: usize, k: usize },
    #[error("objective is not finite at the evaluated parameters")]
    NonFiniteObjective,
    #[error("annealing schedule has no steps")]
    ScheduleExhausted,
    #[error("fraction must lie in [0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("point counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from invalid user input rather than a failure at run time.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io(_) | Error::NonFiniteObjective | Error::SingularJacobian { .. } => false,
            Error::Csv(e) => !e.is_io_error(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
