use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{compute_residuals, drift_velocity, AdmConfig, AdmError, AdmModel, ObsBatch};
use crate::cno::{encode_inputs, Surrogate};
use crate::datagen::{sample_observations, Record, SparseObservation};
use crate::numerics::instrument::{self, Counters};
use crate::numerics::{Backend, OptimizerState, SplitRng, Tape, Tensor};

/// Supervision signal for the velocity network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VelocityTarget {
    /// Kernel-weighted consensus drift from forward residuals only.
    Drift,
    /// Negative gradient of the partial L1 loss through the frozen surrogate.
    SurrogateGradient,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdmTrainReport {
    pub epoch_losses: Vec<f64>,
    pub iterations: usize,
    /// Instrumentation deltas over the whole run.
    pub counters: Counters,
}

/// Trains the velocity network against drift targets.
pub fn train_adm<S: Surrogate + ?Sized>(
    surrogate: &S,
    records: &[Record],
    x0: &[f64],
    config: &AdmConfig,
    rng: SplitRng,
) -> Result<(AdmModel, AdmTrainReport), AdmError> {
    train_velocity(surrogate, records, x0, config, VelocityTarget::Drift, rng)
}

/// Negative gradient of `Σ_b (1/M) Σ |G(k_b) − u_obs,b|` w.r.t. `k`,
/// differentiating through the surrogate with its weights held constant.
pub fn surrogate_gradient_target<S: Surrogate + ?Sized>(
    surrogate: &S,
    inputs: &Tensor,
    k: &Tensor,
    obs: &ObsBatch,
) -> Result<Tensor, AdmError> {
    let mut tape = Tape::frozen_params();
    let kv = tape.leaf(k.clone());
    let pred = surrogate.record(&mut tape, inputs, kv)?;
    let loss = tape.weighted_l1(&pred, &obs.dense, Some(&obs.loss_weight()), 1.0)?;
    let grads = tape.backward(loss)?;
    Ok(grads.wrt(&tape, kv).map(|g| -g))
}

/// Shared training loop for the drifting model and its gradient-supervised
/// ablation. Particles follow `k_τ = (1−τ)k⁰ + τk*` with `k⁰ ~ N(0, I)`.
pub fn train_velocity<S: Surrogate + ?Sized>(
    surrogate: &S,
    records: &[Record],
    x0: &[f64],
    config: &AdmConfig,
    target: VelocityTarget,
    rng: SplitRng,
) -> Result<(AdmModel, AdmTrainReport), AdmError> {
    config.validate()?;
    if records.is_empty() {
        return Err(AdmError::Config("training set is empty".into()));
    }
    let (s, p, t) = (surrogate.state_dim(), surrogate.param_count(), surrogate.n_steps());
    let start = instrument::snapshot();
    let mut model = AdmModel::new(config.clone(), s, p, t, rng.named("init"))?;
    let mut opt = OptimizerState::adam(config.learning_rate);
    let mut order_rng = rng.named("order").rng();
    let mut draw_rng = rng.named("draws").rng();
    let mut report = AdmTrainReport::default();
    let mut order: Vec<usize> = (0..records.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            let rows = b * config.tau_samples;
            let mut all_k = Vec::with_capacity(rows * p);
            let mut all_u = Vec::with_capacity(rows * s * t);
            let mut all_v = Vec::with_capacity(rows * p);
            let mut all_obs: Vec<SparseObservation> = Vec::with_capacity(rows);
            let mut taus = Vec::with_capacity(rows);

            for _ in 0..config.tau_samples {
                let tau: f64 = draw_rng.gen();
                let obs = chunk
                    .iter()
                    .map(|&i| sample_observations(&records[i].traj, config.m_obs, &mut draw_rng))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut k = Vec::with_capacity(b * p);
                let mut k_star = Vec::with_capacity(b * p);
                let mut truth = Vec::with_capacity(b * s * t);
                for &i in chunk {
                    for &ks in &records[i].unit {
                        let k0: f64 = draw_rng.sample(StandardNormal);
                        k.push((1.0 - tau) * k0 + tau * ks);
                    }
                    k_star.extend_from_slice(&records[i].unit);
                    truth.extend_from_slice(records[i].traj.data());
                }
                let k = Tensor::new(&[b, p], k)?;
                let k_star = Tensor::new(&[b, p], k_star)?;
                let truth = Tensor::new(&[b, s, t], truth)?;
                let inputs = encode_inputs(&obs, x0)?;
                let u_hat = surrogate.predict(&inputs, &k)?;
                let ob = ObsBatch::new(&obs)?;
                let v = match target {
                    VelocityTarget::Drift => {
                        let residuals = compute_residuals(&u_hat, &truth)?;
                        drift_velocity(&k, &k_star, &residuals, config.sigma_floor)?
                    }
                    VelocityTarget::SurrogateGradient => surrogate_gradient_target(surrogate, &inputs, &k, &ob)?,
                };
                if !v.is_finite() {
                    return Err(AdmError::Diverged {
                        what: "target",
                        epoch,
                        batch,
                    });
                }
                all_k.extend_from_slice(k.data());
                all_u.extend_from_slice(u_hat.data());
                all_v.extend_from_slice(v.data());
                all_obs.extend(obs);
                taus.extend(std::iter::repeat(tau).take(b));
            }

            let ob = ObsBatch::new(&all_obs)?;
            let u_hat = Tensor::new(&[rows, s, t], all_u)?;
            let v = Tensor::new(&[rows, p], all_v)?;
            let mut tape = Tape::new();
            let kv = tape.constant(Tensor::new(&[rows, p], all_k)?);
            let pred = model.forward(&mut tape, &kv, &u_hat, &ob, &taus)?;
            let loss = tape.weighted_l1(&pred, &v, None, rows as f64)?;
            let value = tape.value(&loss).item();
            if !value.is_finite() {
                return Err(AdmError::Diverged {
                    what: "loss",
                    epoch,
                    batch,
                });
            }
            let grads = tape.backward(loss)?;
            let g = tape.slot_gradients(&grads, model.params.len());
            model.params.apply(&mut opt, &g)?;
            total += value;
            batches += 1;
            report.iterations += 1;
        }
        report.epoch_losses.push(total / batches.max(1) as f64);
    }
    report.counters = instrument::snapshot().since(start);
    Ok((model, report))
}
