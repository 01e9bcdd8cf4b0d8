//! Benchmark ODE systems and the solvers that produce ground-truth
//! trajectories.

mod grid;
mod solvers;
mod systems;

use thiserror::Error;

pub use grid::{TimeGrid, Trajectory};
pub use solvers::{solve, solve_nonstiff, solve_stiff, NonstiffOptions, StiffOptions};
pub use systems::{
    grn_rhs, logistic, pack_params, unpack_params, Grn, GrnSpec, LinearDecay, OdeSystem, ParamPrior, StiffDemo,
    SystemKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter vector has length {found}, expected {expected}")]
    ParamLength { expected: usize, found: usize },
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("parameter {index} = {value} outside bounds [{low}, {high}]")]
    OutOfBounds { index: usize, value: f64, low: f64, high: f64 },
    #[error("Newton iteration failed on interval [{t_start}, {t_end}] after reaching the substep floor")]
    NewtonFailure { t_start: f64, t_end: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
}
