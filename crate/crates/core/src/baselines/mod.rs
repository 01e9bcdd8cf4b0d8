//! Inversion baselines sharing the frozen surrogate: gradient descent,
//! Langevin dynamics, Metropolis sampling, a small evolution strategy, the
//! gradient-supervised drifting ablation and direct regression.

mod gradient;
mod mlp;
mod search;

use thiserror::Error;

use crate::adm::{AdmError, ObsBatch};
use crate::binio::FormatError;
use crate::checkpoint::LoadError;
use crate::cno::CnoError;
use crate::datagen::DataError;
use crate::numerics::{NumericsError, OptimizerKind, Tensor};

pub use crate::adm::InvertResult;
pub use gradient::{gd_invert, sgld_invert};
pub use mlp::{mlp_predict, train_mlp_regressor, MlpConfig, MlpRegressor};
pub use search::{es_invert, mcmc_invert};

use crate::adm::{adm_invert_tagged, train_velocity, AdmConfig, AdmModel, AdmTrainReport, VelocityTarget};
use crate::cno::Surrogate;
use crate::datagen::{Record, SparseObservation};
use crate::numerics::SplitRng;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite gradient at iteration {0}")]
    NanGradient(usize),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    Diverged { what: &'static str, epoch: usize, batch: usize },
    #[error(transparent)]
    Surrogate(#[from] CnoError),
    #[error(transparent)]
    Adm(#[from] AdmError),
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

/// Objective minimized by the gradient baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartialLoss {
    /// `(1/M) Σ |Û − u|` over observed nodes.
    L1,
    /// `(1/2M) Σ (Û − u)²`, used to check the linear-rate recursion.
    HalfSquared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub iterations: usize,
    /// Optimizer used by [`gd_invert`].
    pub optimizer: OptimizerKind,
    pub sgd_learning_rate: f64,
    pub adam_learning_rate: f64,
    pub loss: PartialLoss,
    pub sgld_learning_rate: f64,
    pub sgld_temperature: f64,
    pub mcmc_temperature: f64,
    /// Random-walk proposal std in unit space.
    pub mcmc_proposal_scale: f64,
    /// Offspring per generation.
    pub es_population: usize,
    /// Parents kept for recombination.
    pub es_parents: usize,
    pub es_sigma: f64,
    /// Rate of the log-step-size update toward a 1/5 success fraction.
    pub es_adapt: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            optimizer: OptimizerKind::Sgd,
            sgd_learning_rate: 0.1,
            adam_learning_rate: 0.05,
            loss: PartialLoss::L1,
            sgld_learning_rate: 1e-3,
            sgld_temperature: 1.0,
            mcmc_temperature: 1.0,
            mcmc_proposal_scale: 0.05,
            es_population: 8,
            es_parents: 2,
            es_sigma: 0.3,
            es_adapt: 0.6,
        }
    }
}

impl BaselineConfig {
    pub fn with_optimizer(&self, optimizer: OptimizerKind) -> Self {
        Self {
            optimizer,
            ..self.clone()
        }
    }

    /// Step size of the selected gradient-descent optimizer.
    pub fn learning_rate(&self) -> f64 {
        match self.optimizer {
            OptimizerKind::Sgd => self.sgd_learning_rate,
            OptimizerKind::Adam => self.adam_learning_rate,
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::Config(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.es_population == 0 || self.es_parents == 0 || self.es_parents > self.es_population {
            return bad("es_parents must lie in 1..=es_population");
        }
        let rates = [
            ("sgd_learning_rate", self.sgd_learning_rate),
            ("adam_learning_rate", self.adam_learning_rate),
            ("sgld_learning_rate", self.sgld_learning_rate),
            ("sgld_temperature", self.sgld_temperature),
            ("mcmc_temperature", self.mcmc_temperature),
            ("mcmc_proposal_scale", self.mcmc_proposal_scale),
            ("es_sigma", self.es_sigma),
            ("es_adapt", self.es_adapt),
        ];
        // zero is allowed: it switches the corresponding move off
        if let Some((name, _)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(BaselineError::Config(format!("{name} must be finite and non-negative")));
        }
        Ok(())
    }
}

/// Per-row partial loss of predictions `[n, S, T]` against observations.
pub(crate) fn row_losses(pred: &Tensor, obs: &ObsBatch, loss: PartialLoss) -> Vec<f64> {
    let w = obs.loss_weight();
    let per = pred.len() / pred.dim(0).max(1);
    pred.data()
        .chunks(per)
        .zip(obs.dense.data().chunks(per))
        .zip(w.data().chunks(per))
        .map(|((p, u), w)| {
            p.iter()
                .zip(u)
                .zip(w)
                .map(|((p, u), w)| match loss {
                    PartialLoss::L1 => w * (p - u).abs(),
                    PartialLoss::HalfSquared => 0.5 * w * (p - u) * (p - u),
                })
                .sum()
        })
        .collect()
}

/// Partial loss of every row of `k: [n, P]` using forward passes only.
pub fn partial_losses<S: Surrogate + ?Sized>(
    surrogate: &S,
    inputs: &Tensor,
    obs: &ObsBatch,
    k: &Tensor,
    loss: PartialLoss,
) -> Result<Vec<f64>, BaselineError> {
    let pred = surrogate.predict(inputs, k)?;
    Ok(row_losses(&pred, obs, loss))
}

/// Trains the drifting architecture against `−∇_k` of the partial L1 loss
/// through the frozen surrogate instead of drift targets.
pub fn train_fm_grad<S: Surrogate + ?Sized>(
    surrogate: &S,
    records: &[Record],
    x0: &[f64],
    config: &AdmConfig,
    rng: SplitRng,
) -> Result<(AdmModel, AdmTrainReport), BaselineError> {
    Ok(train_velocity(surrogate, records, x0, config, VelocityTarget::SurrogateGradient, rng)?)
}

/// Integrates a gradient-supervised field exactly like the drifting model.
pub fn fm_grad_invert<S: Surrogate + ?Sized>(
    model: &AdmModel,
    surrogate: &S,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    steps: usize,
) -> Result<Vec<InvertResult>, BaselineError> {
    Ok(adm_invert_tagged("fm_grad", model, surrogate, obs, x0, k0, steps)?)
}
