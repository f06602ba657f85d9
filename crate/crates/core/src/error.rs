//! Error type shared across the lab.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid step set: {0}")]
    InvalidStepSet(String),

    #[error("invalid site distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("site {site:?} outside environment domain")]
    SiteOutsideDomain { site: Vec<i64> },

    #[error("box volume {volume} exceeds cap {cap}")]
    BoxTooLarge { volume: u128, cap: u128 },

    #[error("path count {paths} exceeds oracle cap {cap}")]
    PathBudgetExceeded { paths: u128, cap: u128 },

    #[error("operation `{0}` requires a directed step set")]
    NotDirected(&'static str),

    #[error("operation `{0}` requires an i.i.d. environment")]
    NotIid(&'static str),

    #[error("operation `{0}` requires a periodic environment")]
    NotPeriodic(&'static str),

    #[error("step count {n} not divisible by dimension {d}")]
    NotDivisible { n: usize, d: usize },

    #[error("step digraph on the torus is not strongly connected")]
    NotStronglyConnected,

    #[error("power iteration stalled after {iterations} iterations (residual {residual:.3e})")]
    PowerIterationStalled { residual: f64, iterations: usize },

    #[error("series diverges at lambda = {lambda} (tilt at or below the quenched free energy)")]
    DivergentSeries { lambda: f64 },

    #[error("annealed free energy is infinite; {0} is undefined")]
    DivergentAnnealed(&'static str),

    #[error("certification failed: value {value} vs reference {reference} (|delta| {delta:.3e} > tol {tol:.1e})")]
    CertificationFailed {
        value: f64,
        reference: f64,
        delta: f64,
        tol: f64,
    },

    #[error("optimizer stalled: {0}")]
    OptimizerStalled(String),

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("stored environment does not match its header: {0}")]
    StoredMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
