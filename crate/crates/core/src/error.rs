use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("demand {demand} outside [0, {n_total}]")]
    DemandOutOfRange { demand: i64, n_total: u32 },

    #[error("price undefined at demand = N = {0}: supply is zero")]
    UndefinedPrice(u32),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty return series: {0}")]
    EmptySeries(String),

    #[error("invalid choice value {0}, expected -1, 0 or 1")]
    InvalidChoice(i64),

    #[error("resource exhausted: {0}")]
    Resource(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
