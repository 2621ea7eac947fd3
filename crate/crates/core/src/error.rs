use thiserror::Error;

use crate::expr::{EvalError, ExprError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GError {
    #[error("invalid uncertainty interval [{lo}, {hi}]: need 0 < lo <= hi")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("unsupported Brownian dimension {0} (only 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("matrix has {got} entries, expected a {expected}x{expected} matrix")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix argument of G is not symmetric")]
    NotSymmetric,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("missing coefficient `{0}`")]
    MissingCoefficient(String),
    #[error("in coefficient `{field}`: {source}")]
    Expression {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("config: {0}")]
    Config(String),
    #[error("invalid constant `{name}` = {value}")]
    InvalidConstant { name: &'static str, value: f64 },
    #[error(transparent)]
    G(#[from] GError),
    #[error("empty control set")]
    EmptyControlSet,
    #[error("|R(u)| = {norm} exceeds alpha2 = {alpha2} at control #{index}")]
    ControlBound { index: usize, norm: f64, alpha2: f64 },
    #[error("evaluation of `{field}` failed at {point:?}: {source}")]
    Evaluation {
        field: String,
        point: Vec<f64>,
        #[source]
        source: EvalError,
    },
}

#[derive(Debug, Error)]
pub enum PdeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    G(#[from] GError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("CFL violated: dt = {dt} exceeds the monotonicity limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("scheme not monotone at node {node}: {detail}")]
    NonMonotone { node: usize, detail: String },
    #[error("non-finite value at node {node} (x = {x:?}) in {stage}")]
    NonFinite {
        node: usize,
        x: Vec<f64>,
        stage: &'static str,
    },
    #[error("blow-up at t = {t}: |u| = {value} exceeds guard {guard}")]
    BlowUp { t: f64, value: f64, guard: f64 },
    #[error("point {0:?} lies outside the grid")]
    OutsideDomain(Vec<f64>),
    #[error("field does not live on this grid")]
    GridMismatch,
    #[error("no convergence after horizon {horizon}; sup-norm changes per unit time: {history:?}")]
    NonConvergence { horizon: f64, history: Vec<f64> },
    #[error("infeasible ergodic weighting: gamma1 + 2G(gamma2) = {margin} >= 0")]
    Infeasible { margin: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    G(#[from] GError),
    #[error("scenario level {level} at step {step} lies outside [{lo}, {hi}]")]
    ScenarioOutOfBounds {
        step: usize,
        level: f64,
        lo: f64,
        hi: f64,
    },
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("scenario enumeration of {count} exceeds the guard {guard}")]
    EnumerationGuard { count: u128, guard: u128 },
    #[error("negative lattice weight at node {node} for level {level}: no admissible stencil")]
    NegativeWeight { node: usize, level: f64 },
    #[error("coefficient bound violated: {0}")]
    CoefficientBound(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum ErgodicError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    G(#[from] GError),
    #[error("invalid discount schedule: {0}")]
    InvalidSchedule(String),
    #[error("infeasible ergodic weighting: gamma1 + 2G(gamma2) = {margin} >= 0")]
    Infeasible { margin: f64 },
    #[error("discounted values eps*v(0) are not Cauchy: {history:?}")]
    NonCauchy { history: Vec<(f64, f64)> },
    #[error("horizons too short, slope not stable: {history:?}")]
    HorizonsTooShort { history: Vec<(f64, f64)> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error("horizon instability: {0}")]
    HorizonInstability(String),
}
