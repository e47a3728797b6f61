use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid {element}: {reason}")]
    Invalid { element: String, reason: String },

    #[error("network is not radial: {0}")]
    NonRadial(String),

    #[error("{element} references unknown node {node}")]
    DanglingReference { element: String, node: u32 },

    #[error("branch {0} has zero impedance")]
    ZeroImpedance(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("{0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(element: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Invalid {
        element: element.into(),
        reason: reason.into(),
    }
}
