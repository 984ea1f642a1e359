use crate::ustate::DissectionKey;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    Grid(String),

    /// A path, reset sequence or integrand does not fit together.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("dimension mismatch ({context}): expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error(
        "nonpositive price {value} on path {path} at grid index {index}, component {component}"
    )]
    NonPositivePrice {
        path: usize,
        index: usize,
        component: usize,
        value: f64,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("wealth factor {factor} <= 0 on step ending at grid index {index}")]
    WealthNonPositive { index: usize, factor: f64 },

    #[error("strategy is not strictly admissible: wealth {wealth} at grid index {index}")]
    NotStrictlyAdmissible { index: usize, wealth: f64 },

    /// Drift outside the range of the covariation rate: the market has
    /// unbounded growth on this step and no numeraire exists.
    #[error("market not viable in dissection {key} at step {step}: arbitrage direction {phi:?}")]
    NonViable {
        key: DissectionKey,
        step: usize,
        phi: Vec<f64>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("orthogonal driver increment {increment} <= -1 at step {step}")]
    DeflatorIncrement { step: usize, increment: f64 },

    /// Some node of an event tree admits an arbitrage of the first kind.
    #[error("tree not viable at node {node}: one-step arbitrage {strategy:?}")]
    TreeNotViable { node: usize, strategy: Vec<f64> },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
