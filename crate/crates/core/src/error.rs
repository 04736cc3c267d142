use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// No right-comparable pairs in a node; the caller should make it terminal.
    #[error("no right-comparable pairs to label")]
    EmptyLabels,

    /// Every dipole weight is zero, so there is nothing to split.
    #[error("degenerate split: all dipole weights are zero")]
    DegenerateSplit,

    #[error("quadratic program: {0}")]
    Qp(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) => 2,
            Error::Qp(_) | Error::DegenerateSplit => 4,
            _ => 3,
        }
    }
}
