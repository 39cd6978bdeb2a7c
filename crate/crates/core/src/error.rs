use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or inconsistent input (dimensions, grids, masses, schema).
    #[error("input error: {0}")]
    Input(String),
    /// Evaluation requested at a point where the quantity is not defined.
    #[error("degenerate point: {0}")]
    Degenerate(String),
    /// A model-level impossibility, e.g. mass mismatch under no-flux.
    #[error("model error: {0}")]
    Model(String),
    /// A numerical stage failed (non-convergence, CFL blow-up).
    #[error("numerical failure in {stage}: {detail}")]
    Numerical { stage: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn numerical(stage: &str, detail: impl Into<String>) -> Error {
    Error::Numerical { stage: stage.to_string(), detail: detail.into() }
}
