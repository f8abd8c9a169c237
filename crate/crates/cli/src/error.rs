use std::fmt;

use shapefda::ShapeError;

/// Command failure, classified by exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Input(String),
    /// A computation failed on valid input.
    Numerical(String),
    /// Some pipelines failed; the others' outputs were written.
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Partial(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Partial(m) => write!(f, "partial failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ShapeError> for CliError {
    fn from(e: ShapeError) -> Self {
        match e.root() {
            ShapeError::InvalidInput(_)
            | ShapeError::DimensionMismatch(_)
            | ShapeError::Io(_)
            | ShapeError::InsufficientClassData(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub fn io_error(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
