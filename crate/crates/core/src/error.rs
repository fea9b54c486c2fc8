use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("nonpositive diagonal entry {value} at row {row}")]
    NonPositiveDiagonal { row: usize, value: f64 },

    #[error("missing diagonal entry in row {row}")]
    MissingDiagonal { row: usize },

    #[error("dense routine limited to n <= {limit}, got {n}")]
    TooLarge { n: usize, limit: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("face on line {line} is not a triangle")]
    NonTriangularFace { line: usize },

    #[error("degenerate triangle {index}")]
    DegenerateTriangle { index: usize },

    #[error("no vertex was marked dirichlet")]
    EmptyDirichlet,

    #[error("pcg breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: &'static str },

    #[error("incomplete factorization failed after {restarts} diagonal shift restarts")]
    ShiftEscalation { restarts: usize },

    #[error("model mismatch: {0}")]
    Model(String),

    #[error("model has no initial-guess head")]
    HeadAbsent,

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("training diverged at step {step}: batch loss {loss:e}")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    /// True for failures of the numerics rather than of inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonPositiveDiagonal { .. }
                | Error::Breakdown { .. }
                | Error::ShiftEscalation { .. }
                | Error::NonFinite { .. }
                | Error::Divergence { .. }
                | Error::NonConvergence(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
