use std::path::PathBuf;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("scenario failed validation with {} violation(s): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),

    #[error("unknown location index {0}")]
    UnknownLocation(usize),

    #[error("price must be non-negative, got {0}")]
    NegativePrice(f64),

    #[error("demand {demand} outside pricing domain [0, {capacity}]")]
    OutsideDomain { demand: f64, capacity: f64 },

    #[error(
        "procurement lower bound {lower} must exceed grid price {grid_price} in pool `{pool}` slot {slot}"
    )]
    LowerBoundBelowGridPrice {
        pool: String,
        slot: usize,
        lower: f64,
        grid_price: f64,
    },

    #[error("invalid forecast band in pool `{pool}` slot {slot}: {message}")]
    InvalidForecast {
        pool: String,
        slot: usize,
        message: String,
    },

    #[error("offline search needs {leaves:.3e} leaves, budget is {budget:.3e}; use the upper bound instead")]
    BudgetExceeded { leaves: f64, budget: f64 },

    #[error("value bounds need at least one user with a feasible option")]
    NoBidsForBounds,

    #[error("derived value bounds are degenerate: {0}")]
    DegenerateBounds(String),

    #[error("trace length {rows} cannot be resampled onto {slots} slots")]
    TraceLength { rows: usize, slots: usize },

    #[error("invalid population spec: {0}")]
    InvalidSpec(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .take(3)
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
