use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The two sources cannot describe the same system.
    #[error("incompatible information{}: compatibility {compatibility:e}", step.map(|t| format!(" at step {t}")).unwrap_or_default())]
    Incompatible { step: Option<usize>, compatibility: f64 },

    #[error("size cap exceeded: {size} entries > cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    /// Attaches a time step to an incompatibility error; other errors pass through.
    pub fn at_step(self, t: usize) -> Self {
        match self {
            Error::Incompatible { compatibility, .. } => Error::Incompatible { step: Some(t), compatibility },
            other => other,
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
