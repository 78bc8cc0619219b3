use thiserror::Error;

/// Errors raised by the multiscale pipeline.
#[derive(Debug, Error)]
pub enum LodError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("constraint block is rank deficient at row {row}: {context}")]
    RankDeficient { row: usize, context: String },

    #[error("operator not ready: {0}")]
    State(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LodError>;

impl LodError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        LodError::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        LodError::Numeric(msg.into())
    }

    /// Prefixes the message of a numeric failure with extra context.
    pub fn annotate(self, context: impl std::fmt::Display) -> Self {
        match self {
            LodError::Numeric(m) => LodError::Numeric(format!("{context}: {m}")),
            LodError::RankDeficient { row, context: c } => LodError::RankDeficient {
                row,
                context: format!("{context}: {c}"),
            },
            LodError::NotConverged { iterations, residual } => LodError::Numeric(format!(
                "{context}: no convergence after {iterations} iterations (residual {residual:.3e})"
            )),
            other => other,
        }
    }

    /// True for failures of the numerical kind (exit code 1 in the CLI).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            LodError::Numeric(_) | LodError::NotConverged { .. } | LodError::RankDeficient { .. }
        )
    }
}
