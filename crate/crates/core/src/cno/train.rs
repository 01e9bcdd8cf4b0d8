use rand::seq::SliceRandom;

use super::{encode_inputs, CnoConfig, CnoError, CnoModel, Mode};
use crate::datagen::{sample_indices, Dataset, SparseObservation};
use crate::numerics::{Backend, OptimizerState, SplitRng, Tape, Tensor};

/// Momentum of the batch-norm running averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub iterations: usize,
}

/// Minibatch Adam on the full-trajectory L1 loss. Observation indices are
/// redrawn for every record on every iteration unless the configuration
/// fixes them.
pub fn train_cno(dataset: &Dataset, config: &CnoConfig, rng: SplitRng) -> Result<(CnoModel, TrainReport), CnoError> {
    let (s, p, t) = (dataset.state_dim(), dataset.param_count(), dataset.grid.n_steps);
    config.validate(t)?;
    if dataset.is_empty() {
        return Err(CnoError::Config("training set is empty".into()));
    }
    let mut model = CnoModel::new(config.clone(), s, p, t, rng.named("init"))?;
    let mut opt = OptimizerState::adam(config.learning_rate);
    let x0 = dataset.x0_standardized();
    let mut order_rng = rng.named("order").rng();
    let mut obs_rng = rng.named("observations").rng();
    let fixed = if config.fixed_observations {
        Some(sample_indices(t, config.m_train, &mut rng.named("fixed-observations").rng())?)
    } else {
        None
    };
    let n = dataset.len();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            // batch statistics of a single record are degenerate
            if chunk.len() < 2 && n > 1 {
                continue;
            }
            let mut obs = Vec::with_capacity(chunk.len());
            let mut k = Vec::with_capacity(chunk.len() * p);
            let mut target = Vec::with_capacity(chunk.len() * s * t);
            for &i in chunk {
                let rec = &dataset.records[i];
                let idx = match &fixed {
                    Some(idx) => idx.clone(),
                    None => sample_indices(t, config.m_train, &mut obs_rng)?,
                };
                obs.push(SparseObservation::at_indices(&rec.traj, &idx)?);
                k.extend_from_slice(&rec.unit);
                target.extend_from_slice(rec.traj.data());
            }
            let b = chunk.len();
            let inputs = encode_inputs(&obs, &x0)?;
            let k = Tensor::new(&[b, p], k)?;
            let target = Tensor::new(&[b, s, t], target)?;

            let mut tape = Tape::new();
            let kv = tape.constant(k);
            let (pred, stats) = model.forward(&mut tape, &inputs, &kv, Mode::Train)?;
            let loss = tape.weighted_l1(&pred, &target, None, (b * t) as f64)?;
            let value = tape.value(&loss).item();
            if !value.is_finite() {
                return Err(CnoError::Diverged {
                    what: "loss",
                    epoch,
                    batch,
                });
            }
            let grads = tape.backward(loss)?;
            let g = tape.slot_gradients(&grads, model.params.len());
            if g.iter().flatten().any(|x| !x.is_finite()) {
                return Err(CnoError::Diverged {
                    what: "gradient",
                    epoch,
                    batch,
                });
            }
            model.params.apply(&mut opt, &g)?;
            model.update_running(&stats, BN_MOMENTUM);
            total += value;
            batches += 1;
            report.iterations += 1;
        }
        report.epoch_losses.push(total / batches.max(1) as f64);
    }
    Ok((model, report))
}
