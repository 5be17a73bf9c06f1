use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point outside the domain of chart `{chart}`: {coords:?}")]
    Domain { chart: String, coords: Vec<f64> },
    #[error("form degree {degree} exceeds chart dimension {dim}")]
    Degree { degree: usize, dim: usize },
    #[error("contraction of a 0-form is undefined")]
    ZeroForm,
    #[error("degenerate matrix: {0}")]
    Degenerate(String),
    #[error("singular stratum: {0}")]
    Singular(String),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("refinement check failed: {0}")]
    Refinement(String),
    #[error("3-form is not closed (defect {0:e})")]
    NotClosed(f64),
    #[error("function is not invariant (defect {0:e})")]
    NotInvariant(f64),
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
