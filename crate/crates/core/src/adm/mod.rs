//! Amortized drifting model: Jacobian-free drift targets built from
//! surrogate residuals, the velocity network trained on them, inference by
//! integrating the learned field, and an interacting-particle simulator.

mod invert;
mod model;
mod particles;
mod train;

use thiserror::Error;

use crate::binio::FormatError;
use crate::checkpoint::LoadError;
use crate::cno::CnoError;
use crate::datagen::DataError;
use crate::numerics::{median_sq_pairwise, sq_dist, NumericsError, Tensor};

pub use invert::{adm_invert, InvertResult};
pub use model::{AdmModel, ObsBatch};
pub use particles::{ensemble_consistency, particle_simulate, wasserstein1, ParticleHistory};
pub use train::{surrogate_gradient_target, train_adm, train_velocity, AdmTrainReport, VelocityTarget};
pub(crate) use invert::{adm_invert_tagged, split_results};

#[derive(Debug, Error)]
pub enum AdmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("kernel statistics need at least two particles, got {0}")]
    TooFewParticles(usize),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    Diverged { what: &'static str, epoch: usize, batch: usize },
    #[error("non-finite parameters after step {0}")]
    NonFiniteState(usize),
    #[error(transparent)]
    Surrogate(#[from] CnoError),
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

#[derive(Clone, Debug, PartialEq)]
pub struct AdmConfig {
    pub sigma_floor: f64,
    /// Independent `τ` draws per minibatch.
    pub tau_samples: usize,
    pub integration_steps: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Observations per record used to condition the velocity network.
    pub m_obs: usize,
    pub hidden: usize,
    pub n_blocks: usize,
}

impl Default for AdmConfig {
    fn default() -> Self {
        Self {
            sigma_floor: 1e-8,
            tau_samples: 1,
            integration_steps: 20,
            epochs: 100,
            learning_rate: 1e-4,
            batch_size: 32,
            m_obs: 3,
            hidden: 64,
            n_blocks: 3,
        }
    }
}

impl AdmConfig {
    pub fn validate(&self) -> Result<(), AdmError> {
        let counts = [
            ("tau_samples", self.tau_samples),
            ("integration_steps", self.integration_steps),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("m_obs", self.m_obs),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(AdmError::Config(format!("{name} must be positive")));
        }
        if self.batch_size < 2 {
            return Err(AdmError::Config("batch_size must be at least 2 for kernel construction".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(AdmError::Config("sigma_floor must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AdmError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Flattened residuals `R_i = Û_i − U_i` for `[B, ...]` predictions.
pub fn compute_residuals(pred: &Tensor, truth: &Tensor) -> Result<Vec<Vec<f64>>, AdmError> {
    if pred.shape() != truth.shape() || pred.rank() < 1 {
        return Err(AdmError::Shape(format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let per = pred.len() / pred.dim(0).max(1);
    Ok(pred
        .data()
        .chunks(per)
        .zip(truth.data().chunks(per))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| a - b).collect())
        .collect())
}

/// Gaussian kernel on residuals with median-heuristic bandwidth
/// `σ = max(med²/ln B, σ_floor)`. Returns `(K, σ)`.
pub fn kernel_matrix(residuals: &[Vec<f64>], sigma_floor: f64) -> Result<(Tensor, f64), AdmError> {
    let b = residuals.len();
    if b < 2 {
        return Err(AdmError::TooFewParticles(b));
    }
    let vecs: Vec<Tensor> = residuals.iter().map(|r| Tensor::from_vec(r.clone())).collect();
    let med = median_sq_pairwise(&vecs)?;
    let ln_b = (b as f64).ln();
    let sigma = (med / ln_b).max(sigma_floor);
    let floored = med / ln_b < sigma_floor;
    let mut k = vec![0.0; b * b];
    for i in 0..b {
        k[i * b + i] = 1.0;
        for j in i + 1..b {
            let sq = sq_dist(&residuals[i], &residuals[j]);
            // B^(−sq/med) equals exp(−sq/σ) but stays exact when sq == med
            let v = if floored { (-sq / sigma).exp() } else { (b as f64).powf(-sq / med) };
            k[i * b + j] = v;
            k[j * b + i] = v;
        }
    }
    Ok((Tensor::new(&[b, b], k).expect("extents match"), sigma))
}

/// `v_i = −(1/B) Σ_j K_ij w_j (k_i − k_j*)` for `k, k_star: [B, P]`.
pub fn drift_targets(k: &Tensor, k_star: &Tensor, kernel: &Tensor, w: &[f64]) -> Result<Tensor, AdmError> {
    let (b, p) = (k.dim(0), k.dim(1));
    if k.shape() != k_star.shape() || kernel.shape() != [b, b] || w.len() != b {
        return Err(AdmError::Shape(format!(
            "k {:?}, k* {:?}, K {:?}, w {}",
            k.shape(),
            k_star.shape(),
            kernel.shape(),
            w.len()
        )));
    }
    let (kd, sd, kk) = (k.data(), k_star.data(), kernel.data());
    let mut v = vec![0.0; b * p];
    for i in 0..b {
        let vi = &mut v[i * p..(i + 1) * p];
        for j in 0..b {
            let c = kk[i * b + j] * w[j];
            if c == 0.0 {
                continue;
            }
            for q in 0..p {
                vi[q] -= c * (kd[i * p + q] - sd[j * p + q]);
            }
        }
        vi.iter_mut().for_each(|x| *x /= b as f64);
    }
    Ok(Tensor::new(&[b, p], v).expect("extents match"))
}

/// Residual norms `w_j = ‖R_j‖₂`.
pub fn residual_weights(residuals: &[Vec<f64>]) -> Vec<f64> {
    residuals.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
}

/// Drift velocities for a batch of particles against their targets; a single
/// particle bypasses the kernel with `K = 1`.
pub fn drift_velocity(
    k: &Tensor,
    k_star: &Tensor,
    residuals: &[Vec<f64>],
    sigma_floor: f64,
) -> Result<Tensor, AdmError> {
    let w = residual_weights(residuals);
    let kernel = if residuals.len() == 1 {
        Tensor::ones(&[1, 1])
    } else {
        kernel_matrix(residuals, sigma_floor)?.0
    };
    drift_targets(k, k_star, &kernel, &w)
}
