//! Numeric substrate: tensors, real FFT, reverse-mode autodiff, optimizers
//! and deterministic random streams.

mod backend;
pub mod fft;
pub mod gemm;
pub mod gradcheck;
pub mod instrument;
pub mod kernels;
mod optim;
mod params;
mod rng;
mod stats;
mod tape;
mod tensor;

use thiserror::Error;

pub use backend::{Backend, BatchStats, Eager};
pub use fft::{irfft, rfft, Spectrum};
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::ParamSet;
pub use rng::SplitRng;
pub use stats::{median_sq_pairwise, sq_dist};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;


#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("expected rank {expected}, found {found}")]
    Rank { expected: usize, found: usize },
    #[error("empty axis")]
    EmptyAxis,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("modes {modes} out of range (max {max})")]
    ModesOutOfRange { modes: usize, max: usize },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("need at least two vectors, got {0}")]
    TooFewVectors(usize),
}

/// Truncated spectral convolution of `z: [channels, time]` (or a batch
/// `[batch, channels, time]`) with complex weights `[c_out, c_in, modes]`
/// stored as separate real and imaginary parts.
pub fn spectral_conv(z: &Tensor, r_re: &Tensor, r_im: &Tensor, modes: usize) -> Result<Tensor, NumericsError> {
    if z.rank() == 2 {
        let batched = z.clone().reshape(&[1, z.dim(0), z.dim(1)])?;
        let (y, _) = kernels::spectral_conv(&batched, r_re, r_im, modes)?;
        let shape = [y.dim(1), y.dim(2)];
        y.reshape(&shape)
    } else {
        kernels::spectral_conv(z, r_re, r_im, modes).map(|(y, _)| y)
    }
}
