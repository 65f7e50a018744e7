use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("derivative order {requested} exceeds budget {budget}")]
    DerivativeBudget { requested: usize, budget: usize },

    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),

    #[error("tail truncation search failed to bracket the active region: {0}")]
    TruncationFailure(String),

    #[error("Fredholm determinant did not converge: last delta {delta:e} at {nodes} nodes/level")]
    FredholmNoConvergence { delta: f64, nodes: usize },

    #[error("time step too large: {0}")]
    StepTooLarge(String),

    #[error("path rejection rate {rate:.4} exceeds budget {budget:.4} ({context})")]
    RejectionBudget { rate: f64, budget: f64, context: String },

    #[error("rejection sampler budget exhausted: {0}")]
    SamplerBudget(String),

    #[error("root collision: minimal gap {gap:e} below threshold")]
    RootCollision { gap: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}
