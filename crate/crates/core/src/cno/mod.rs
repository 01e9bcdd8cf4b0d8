//! Conditional neural operator surrogate: sparse observations, the initial
//! state and ODE parameters in, a full standardized trajectory out.

mod model;
mod train;

use thiserror::Error;

use crate::binio::FormatError;
use crate::checkpoint::LoadError;
use crate::datagen::DataError;
use crate::numerics::{NumericsError, Tape, Tensor, Var};

pub use model::{encode_inputs, CnoModel, Mode};
pub use train::{train_cno, TrainReport};

#[derive(Debug, Error)]
pub enum CnoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    Diverged { what: &'static str, epoch: usize, batch: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A frozen forward map from parameters to standardized trajectories,
/// consumed by the inversion methods.
pub trait Surrogate: Sync {
    fn state_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn n_steps(&self) -> usize;

    /// Deterministic forward pass; `inputs: [B, 2S+2, T]`, `k: [B, P]`,
    /// output `[B, S, T]`. Never touches gradient machinery.
    fn predict(&self, inputs: &Tensor, k: &Tensor) -> Result<Tensor, CnoError>;

    /// Forward pass recorded on `tape` with the weights held constant, so
    /// gradients flow to `k` only.
    fn record(&self, tape: &mut Tape, inputs: &Tensor, k: Var) -> Result<Var, CnoError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnoConfig {
    pub latent_dim: usize,
    pub n_modes: usize,
    pub n_blocks: usize,
    /// Observations per record per training iteration.
    pub m_train: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Cross-attention between the lifted input and the last block.
    pub attention: bool,
    /// Train on one fixed index set instead of resampling every iteration.
    pub fixed_observations: bool,
}

impl Default for CnoConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            n_modes: 16,
            n_blocks: 4,
            m_train: 3,
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 32,
            attention: true,
            fixed_observations: false,
        }
    }
}

impl CnoConfig {
    pub fn validate(&self, n_steps: usize) -> Result<(), CnoError> {
        let max_modes = n_steps / 2 + 1;
        let counts = [
            ("latent_dim", self.latent_dim),
            ("n_modes", self.n_modes),
            ("n_blocks", self.n_blocks),
            ("m_train", self.m_train),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CnoError::Config(format!("{name} must be positive")));
        }
        if self.n_modes > max_modes {
            return Err(CnoError::Config(format!(
                "n_modes {} exceeds {max_modes} for {n_steps} time steps",
                self.n_modes
            )));
        }
        if self.m_train > n_steps {
            return Err(CnoError::Config(format!("m_train {} exceeds {n_steps} time steps", self.m_train)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CnoError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}
