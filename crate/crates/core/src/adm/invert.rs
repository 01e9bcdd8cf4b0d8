use std::time::Instant;

use super::{AdmError, AdmModel, ObsBatch};
use crate::cno::{encode_inputs, Surrogate};
use crate::datagen::SparseObservation;
use crate::numerics::Tensor;

/// Outcome of one inversion run from one initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertResult {
    pub method: String,
    pub init: Vec<f64>,
    pub k_hat: Vec<f64>,
    /// One entry per iteration: the objective for optimizers, the velocity
    /// norm for integrators.
    pub history: Vec<f64>,
    pub wall_time_seconds: f64,
    /// Fraction of accepted proposals, for samplers.
    pub acceptance_rate: Option<f64>,
}

/// Splits batched per-row results into per-initialization records; the
/// batch wall time is shared evenly.
pub(crate) fn split_results(
    method: &str,
    k0: &Tensor,
    k: &Tensor,
    history: &[Vec<f64>],
    elapsed: f64,
) -> Vec<InvertResult> {
    let (n, p) = (k0.dim(0), k0.dim(1));
    (0..n)
        .map(|i| InvertResult {
            method: method.to_string(),
            init: k0.data()[i * p..(i + 1) * p].to_vec(),
            k_hat: k.data()[i * p..(i + 1) * p].to_vec(),
            history: history.iter().map(|h| h[i]).collect(),
            wall_time_seconds: elapsed / n as f64,
            acceptance_rate: None,
        })
        .collect()
}

/// Integrates the learned field with explicit Euler steps `Δτ = 1/steps`
/// from each row of `k0: [n, P]`, using forward passes only.
pub fn adm_invert<S: Surrogate + ?Sized>(
    adm: &AdmModel,
    surrogate: &S,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    steps: usize,
) -> Result<Vec<InvertResult>, AdmError> {
    adm_invert_tagged("adm", adm, surrogate, obs, x0, k0, steps)
}

pub(crate) fn adm_invert_tagged<S: Surrogate + ?Sized>(
    method: &str,
    adm: &AdmModel,
    surrogate: &S,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    steps: usize,
) -> Result<Vec<InvertResult>, AdmError> {
    if steps == 0 {
        return Err(AdmError::Config("integration needs at least one step".into()));
    }
    let clock = Instant::now();
    let n = k0.dim(0);
    let p = k0.dim(1);
    let inputs = encode_inputs(&vec![obs.clone(); n], x0)?;
    let ob = ObsBatch::repeat(obs, n)?;
    let mut k = k0.clone();
    let mut history = Vec::with_capacity(steps);
    let dt = 1.0 / steps as f64;
    for step in 0..steps {
        let tau = vec![step as f64 * dt; n];
        let u_hat = surrogate.predict(&inputs, &k)?;
        let v = adm.velocity(&k, &u_hat, &ob, &tau)?;
        history.push(
            v.data()
                .chunks(p)
                .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect::<Vec<_>>(),
        );
        k.axpy(dt, &v);
        if !k.is_finite() {
            return Err(AdmError::NonFiniteState(step));
        }
    }
    Ok(split_results(method, k0, &k, &history, clock.elapsed().as_secs_f64()))
}
