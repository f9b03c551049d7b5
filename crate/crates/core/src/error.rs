use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative height {0} passed to the mobility")]
    NegativeHeight(f64),

    #[error("non-positive height {0} where a strictly positive value is required")]
    NonPositiveHeight(f64),

    #[error("the limit mobility (epsilon = 0) has no regularized entropy")]
    LimitMobilityHasNoEpsilonEntropy,

    #[error("initial data has a negative value {value} at node {index}")]
    NegativeInitialData { index: usize, value: f64 },

    #[error("invalid time horizon or step count: {0}")]
    InvalidHorizon(String),

    #[error("time {0} is not a knot of the Wiener path")]
    NotAKnot(f64),

    #[error("Newton iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NewtonDivergence { residual: f64, iterations: usize },

    #[error("positivity lost at node {index} (value {value:e})")]
    PositivityLoss { index: usize, value: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("inner time step collapsed to {tau:e} at t = {t}")]
    StepCollapse { tau: f64, t: f64 },

    #[error("Wiener path does not cover the splitting grid: {0}")]
    PathGridMismatch(String),

    #[error("not enough data for the fit: {0}")]
    InsufficientData(String),

    #[error("energy reached numerical zero at t = {t}")]
    EnergyUnderflow { t: f64 },

    #[error("invalid a.s. bound K = {0}")]
    InvalidBound(f64),

    #[error("ensemble failed: {failed} of {total} paths failed")]
    EnsembleFailure { failed: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        SimError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
