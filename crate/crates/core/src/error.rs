use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// `Domain` covers parameter and argument validation and maps to exit code 2
/// in the CLI; the numerical variants map to exit code 1.
#[derive(Error, Debug)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("discrete operator lost monotonicity at node {node} (x = {x:.6e}): {diagnosis}")]
    Monotonicity {
        node: usize,
        x: f64,
        diagnosis: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("policy evaluation failed at x = {x:.6e}: {reason}")]
    Policy { x: f64, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Whether the error is a validation failure (as opposed to a numerical one).
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Grid(_) | Error::Json(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Grid(_) => "grid",
            Error::Monotonicity { .. } => "monotonicity",
            Error::Numerical(_) => "numerical",
            Error::Policy { .. } => "policy",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
