use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::BaselineError;
use crate::binio::FormatError;
use crate::checkpoint::Checkpoint;
use crate::datagen::{sample_observations, Record, SparseObservation};
use crate::numerics::{Backend, Eager, OptimizerState, ParamSet, SplitRng, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    /// Hidden layers.
    pub depth: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub m_obs: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 2,
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            m_obs: 3,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.hidden == 0 || self.depth == 0 || self.epochs == 0 || self.batch_size == 0 || self.m_obs == 0 {
            return Err(BaselineError::Config("mlp sizes and counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BaselineError::Config("mlp learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Direct regression from flattened `(masked values, mask, x0)` to `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpRegressor {
    pub config: MlpConfig,
    pub state_dim: usize,
    pub param_count: usize,
    pub n_steps: usize,
    pub params: ParamSet,
}

fn features(obs: &[SparseObservation], x0: &[f64], s: usize, t: usize) -> Result<Tensor, BaselineError> {
    let width = s * t + t + s;
    let mut out = Vec::with_capacity(obs.len() * width);
    for o in obs {
        if o.values.dim(0) != s || o.n_steps() != t || x0.len() != s {
            return Err(BaselineError::Config(format!(
                "observation extents [{}, {}] and x0 of {} do not match [{s}, {t}]",
                o.values.dim(0),
                o.n_steps(),
                x0.len()
            )));
        }
        out.extend_from_slice(o.dense().data());
        out.extend(o.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        out.extend_from_slice(x0);
    }
    Ok(Tensor::new(&[obs.len(), width], out)?)
}

impl MlpRegressor {
    pub fn new(config: MlpConfig, state_dim: usize, param_count: usize, n_steps: usize, seed: SplitRng) -> Result<Self, BaselineError> {
        config.validate()?;
        let mut rng = seed.rng();
        let mut params = ParamSet::new();
        let mut fan_in = state_dim * n_steps + n_steps + state_dim;
        for layer in 0..=config.depth {
            let out = if layer == config.depth { param_count } else { config.hidden };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
            params.push(format!("layer.{layer}.w"), Tensor::new(&[out, fan_in], draw(out * fan_in))?);
            params.push(format!("layer.{layer}.b"), Tensor::new(&[out], draw(out))?);
            fan_in = out;
        }
        Ok(Self {
            config,
            state_dim,
            param_count,
            n_steps,
            params,
        })
    }

    fn forward<B: Backend>(&self, be: &mut B, x: &Tensor) -> Result<B::Var, BaselineError> {
        let mut h = be.constant(x.clone());
        for layer in 0..=self.config.depth {
            let w = be.param(2 * layer, self.params.get(2 * layer));
            let b = be.param(2 * layer + 1, self.params.get(2 * layer + 1));
            h = be.linear(&h, &w, &b)?;
            if layer < self.config.depth {
                h = be.relu(&h);
            }
        }
        Ok(h)
    }

    /// One forward pass per observation set; returns `[B, P]`.
    pub fn predict(&self, obs: &[SparseObservation], x0: &[f64]) -> Result<Tensor, BaselineError> {
        let x = features(obs, x0, self.state_dim, self.n_steps)?;
        let mut be = Eager;
        let out = self.forward(&mut be, &x)?;
        Ok(Arc::try_unwrap(out).unwrap_or_else(|a| (*a).clone()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("mlp");
        let c = &self.config;
        ck.set("hidden", c.hidden);
        ck.set("depth", c.depth);
        ck.set("epochs", c.epochs);
        ck.set("learning_rate", format!("{:e}", c.learning_rate));
        ck.set("batch_size", c.batch_size);
        ck.set("m_obs", c.m_obs);
        ck.set("state_dim", self.state_dim);
        ck.set("param_count", self.param_count);
        ck.set("n_steps", self.n_steps);
        for (name, t) in self.params.iter() {
            ck.tensors.push((name.to_string(), t.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, BaselineError> {
        let bad = |m: String| BaselineError::Format(FormatError::Malformed(m));
        ck.expect_kind("mlp")?;
        let parse = |key: &str| -> Result<usize, BaselineError> { Ok(ck.parse(key)?) };
        let config = MlpConfig {
            hidden: parse("hidden")?,
            depth: parse("depth")?,
            epochs: parse("epochs")?,
            learning_rate: ck.parse("learning_rate")?,
            batch_size: parse("batch_size")?,
            m_obs: parse("m_obs")?,
        };
        let mut model = Self::new(config, parse("state_dim")?, parse("param_count")?, parse("n_steps")?, SplitRng::new(0))?;
        if ck.tensors.len() != model.params.len() {
            return Err(bad(format!("checkpoint has {} tensors, model needs {}", ck.tensors.len(), model.params.len())));
        }
        for slot in 0..model.params.len() {
            let name = model.params.name(slot).to_string();
            let t = ck.tensor(&name)?;
            if t.shape() != model.params.get(slot).shape() {
                return Err(bad(format!("tensor `{name}` has shape {:?}", t.shape())));
            }
            *model.params.get_mut(slot) = t.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Fits the regressor with an L1 loss on unit-space parameters, drawing
/// fresh observation sets every epoch.
pub fn train_mlp_regressor(
    records: &[Record],
    x0: &[f64],
    config: &MlpConfig,
    rng: SplitRng,
) -> Result<(MlpRegressor, Vec<f64>), BaselineError> {
    config.validate()?;
    let first = records.first().ok_or_else(|| BaselineError::Config("training set is empty".into()))?;
    let (s, t, p) = (first.traj.dim(0), first.traj.dim(1), first.unit.len());
    let mut model = MlpRegressor::new(config.clone(), s, p, t, rng.named("init"))?;
    let mut opt = OptimizerState::adam(config.learning_rate);
    let mut order_rng = rng.named("order").rng();
    let mut obs_rng = rng.named("observations").rng();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let obs = chunk
                .iter()
                .map(|&i| sample_observations(&records[i].traj, config.m_obs, &mut obs_rng))
                .collect::<Result<Vec<_>, _>>()?;
            let target: Vec<f64> = chunk.iter().flat_map(|&i| records[i].unit.iter().copied()).collect();
            let target = Tensor::new(&[chunk.len(), p], target)?;
            let x = features(&obs, x0, s, t)?;
            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, &x)?;
            let loss = tape.weighted_l1(&pred, &target, None, chunk.len() as f64)?;
            let value = tape.value(&loss).item();
            if !value.is_finite() {
                return Err(BaselineError::Diverged { what: "loss", epoch, batch });
            }
            let grads = tape.backward(loss)?;
            let g = tape.slot_gradients(&grads, model.params.len());
            model.params.apply(&mut opt, &g)?;
            total += value;
            batches += 1;
        }
        losses.push(total / batches.max(1) as f64);
    }
    Ok((model, losses))
}

/// Single-pass inference for a batch of observation sets.
pub fn mlp_predict(model: &MlpRegressor, obs: &[SparseObservation], x0: &[f64]) -> Result<Tensor, BaselineError> {
    model.predict(obs, x0)
}
