//! Inverse neural operator laboratory: a conditional Fourier neural operator
//! surrogate for ODE trajectories and a Jacobian-free amortized drifting
//! model that recovers hidden ODE parameters from sparse observations.

pub mod numerics;
pub mod ode;
pub mod datagen;
pub mod cno;
pub mod adm;
pub mod baselines;
pub mod eval;
pub mod checkpoint;
mod binio;

pub use binio::FormatError;
