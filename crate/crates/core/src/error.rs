use thiserror::Error;

/// Errors raised by the shape-analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero centroid size")]
    ZeroCentroidSize,

    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("underdetermined smoothing: {samples} samples for {basis} basis functions")]
    Underdetermined { samples: usize, basis: usize },

    #[error("ill-conditioned design matrix (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("too many components requested: {requested} > {available}")]
    TooManyComponents { requested: usize, available: usize },

    #[error("no variance")]
    NoVariance,

    #[error("insufficient class data: {0}")]
    InsufficientClassData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<ShapeError>,
    },
}

impl ShapeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        ShapeError::InvalidInput(msg.into())
    }

    /// Wraps the error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        ShapeError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers stripped.
    pub fn root(&self) -> &ShapeError {
        match self {
            ShapeError::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for ShapeError {
    fn from(e: std::io::Error) -> Self {
        ShapeError::Io(e.to_string())
    }
}

impl From<csv::Error> for ShapeError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => ShapeError::Io(e.to_string()),
            _ => ShapeError::invalid(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ShapeError>;
