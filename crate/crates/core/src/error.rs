use std::fmt;

use thiserror::Error;

/// A violated modelling assumption found by [`crate::validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NondegeneracyViolation { t: f64, x: f64, sigma2: f64, c: f64 },
    NegativeIntensity { t: f64, x: f64, value: f64 },
    NonconvexControlCost { t: f64, x: f64, gap: f64 },
    NonlinearDrift { t: f64, x: f64, defect: f64 },
    InvalidInitialDensity(String),
    InvalidParameter(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NondegeneracyViolation { t, x, sigma2, c } => {
                write!(f, "NondegeneracyViolation: sigma^2 = {sigma2} < {c} at (t={t}, x={x})")
            }
            Violation::NegativeIntensity { t, x, value } => {
                write!(f, "NegativeIntensity: lambda = {value} at (t={t}, x={x})")
            }
            Violation::NonconvexControlCost { t, x, gap } => {
                write!(f, "NonconvexControlCost: midpoint gap {gap} at (t={t}, x={x})")
            }
            Violation::NonlinearDrift { t, x, defect } => {
                write!(f, "NonlinearDrift: additivity defect {defect} at (t={t}, x={x})")
            }
            Violation::InvalidInitialDensity(msg) => write!(f, "InvalidInitialDensity: {msg}"),
            Violation::InvalidParameter(msg) => write!(f, "InvalidParameter: {msg}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate range: {0}")]
    DegenerateRange(String),
    #[error("model validation failed: {}", join(.0))]
    Validation(Vec<Violation>),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("CFL number {cfl:.4} exceeds 1 in the {direction} direction")]
    CflViolation { cfl: f64, direction: &'static str },
    #[error("control value {value} outside the box at time step {step}, node {node}")]
    ControlOutOfBox { step: usize, node: usize, value: f64 },
    #[error("inner fixed point diverged at time step {step} (residual {residual:e})")]
    FixedPointDiverged { step: usize, residual: f64 },
    #[error("argument conflict: {0}")]
    ArgumentConflict(String),
    #[error("non-finite input: {0}")]
    NonfiniteInput(String),
    #[error("direction leaves the control box at time step {step}, node {node}")]
    DirectionLeavesBox { step: usize, node: usize },
    #[error("a seed is required for particle simulation")]
    SeedRequired,
    #[error("mollifier width {eps} is below two grid spacings ({dx})")]
    EpsBelowGrid { eps: f64, dx: f64 },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
