use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use super::{AdmConfig, AdmError};
use crate::binio::FormatError;
use crate::checkpoint::Checkpoint;
use crate::datagen::SparseObservation;
use crate::numerics::{Backend, Eager, ParamSet, SplitRng, Tensor};

/// Sparse observations of a batch in dense form.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch {
    /// `[B, S, T]`, zero at unobserved nodes.
    pub dense: Tensor,
    /// `[B, T]`, one at observed nodes.
    pub mask: Tensor,
}

impl ObsBatch {
    pub fn new(obs: &[SparseObservation]) -> Result<Self, AdmError> {
        let first = obs.first().ok_or_else(|| AdmError::Shape("empty observation batch".into()))?;
        let (s, t) = (first.values.dim(0), first.n_steps());
        let mut dense = Vec::with_capacity(obs.len() * s * t);
        let mut mask = Vec::with_capacity(obs.len() * t);
        for o in obs {
            if o.values.dim(0) != s || o.n_steps() != t {
                return Err(AdmError::Shape("observations differ in extents".into()));
            }
            dense.extend_from_slice(o.dense().data());
            mask.extend(o.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        }
        Ok(Self {
            dense: Tensor::new(&[obs.len(), s, t], dense)?,
            mask: Tensor::new(&[obs.len(), t], mask)?,
        })
    }

    /// Repeats a single observation `n` times.
    pub fn repeat(obs: &SparseObservation, n: usize) -> Result<Self, AdmError> {
        Self::new(&vec![obs.clone(); n])
    }

    pub fn len(&self) -> usize {
        self.mask.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `mask/M` broadcast over species: the weight of the partial L1 loss.
    pub fn loss_weight(&self) -> Tensor {
        let (b, s, t) = (self.dense.dim(0), self.dense.dim(1), self.dense.dim(2));
        let mut w = Vec::with_capacity(b * s * t);
        for row in self.mask.data().chunks(t) {
            let m: f64 = row.iter().sum();
            for _ in 0..s {
                w.extend(row.iter().map(|v| v / m));
            }
        }
        Tensor::new(&[b, s, t], w).expect("extents match")
    }
}

/// The velocity network `F(k_τ, Û, u_obs, τ)`: two pooled trajectory
/// encoders, residual MLP blocks modulated by a `τ` embedding, and a head of
/// width `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmModel {
    pub config: AdmConfig,
    pub state_dim: usize,
    pub param_count: usize,
    pub n_steps: usize,
    pub params: ParamSet,
}

type Dense = (usize, usize);

const ENC_U: Dense = (0, 1);
const ENC_OBS: Dense = (2, 3);
const MERGE: Dense = (4, 5);
const TAU: Dense = (6, 7);
const BLOCK_BASE: usize = 8;
const PER_BLOCK: usize = 8;

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("extents match")
}

fn dense(ps: &mut ParamSet, name: &str, out: usize, inp: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (inp as f64).sqrt();
    ps.push(format!("{name}.w"), uniform(&[out, inp], bound, rng));
    ps.push(format!("{name}.b"), uniform(&[out], bound, rng));
}

impl AdmModel {
    pub fn new(config: AdmConfig, state_dim: usize, param_count: usize, n_steps: usize, seed: SplitRng) -> Result<Self, AdmError> {
        config.validate()?;
        let mut rng = seed.rng();
        let (h, s, p) = (config.hidden, state_dim, param_count);
        let mut ps = ParamSet::new();
        dense(&mut ps, "enc.u", h, s + 2, &mut rng);
        dense(&mut ps, "enc.obs", h, 2 * s + 2, &mut rng);
        dense(&mut ps, "merge", h, 2 * h + p, &mut rng);
        dense(&mut ps, "tau", h, 3, &mut rng);
        for i in 0..config.n_blocks {
            dense(&mut ps, &format!("cmlp.{i}.in"), h, h, &mut rng);
            dense(&mut ps, &format!("cmlp.{i}.film.alpha"), h, h, &mut rng);
            dense(&mut ps, &format!("cmlp.{i}.film.beta"), h, h, &mut rng);
            dense(&mut ps, &format!("cmlp.{i}.out"), h, h, &mut rng);
        }
        dense(&mut ps, "head", p, h, &mut rng);
        Ok(Self {
            config,
            state_dim,
            param_count,
            n_steps,
            params: ps,
        })
    }

    fn head_slots(&self) -> Dense {
        let base = BLOCK_BASE + PER_BLOCK * self.config.n_blocks;
        (base, base + 1)
    }

    fn lin<B: Backend>(&self, be: &mut B, x: &B::Var, (w, b): Dense, channels: bool) -> Result<B::Var, AdmError> {
        let w = be.param(w, self.params.get(w));
        let b = be.param(b, self.params.get(b));
        Ok(if channels { be.linear_ch(x, &w, &b)? } else { be.linear(x, &w, &b)? })
    }

    /// Encoder inputs: `[Û, 1, t]` pooled uniformly over time, and
    /// `[u_obs, Û·mask, mask, t]` pooled over observed nodes.
    fn encoder_inputs(&self, u_hat: &Tensor, obs: &ObsBatch) -> (Tensor, Tensor, Tensor, Tensor) {
        let (b, s, t) = (u_hat.dim(0), self.state_dim, self.n_steps);
        let time: Vec<f64> = (0..t).map(|i| if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 }).collect();
        let mut xu = Vec::with_capacity(b * (s + 2) * t);
        let mut xo = Vec::with_capacity(b * (2 * s + 2) * t);
        for i in 0..b {
            let uh = &u_hat.data()[i * s * t..(i + 1) * s * t];
            let od = &obs.dense.data()[i * s * t..(i + 1) * s * t];
            let mk = &obs.mask.data()[i * t..(i + 1) * t];
            xu.extend_from_slice(uh);
            xu.extend(std::iter::repeat(1.0).take(t));
            xu.extend_from_slice(&time);
            xo.extend_from_slice(od);
            for row in uh.chunks(t) {
                xo.extend(row.iter().zip(mk).map(|(a, m)| a * m));
            }
            xo.extend_from_slice(mk);
            xo.extend_from_slice(&time);
        }
        let wu = Tensor::full(&[b, t], 1.0 / t as f64);
        let mut wo = obs.mask.clone();
        for row in wo.data_mut().chunks_mut(t) {
            let m: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= m.max(1.0));
        }
        (
            Tensor::new(&[b, s + 2, t], xu).expect("extents match"),
            wu,
            Tensor::new(&[b, 2 * s + 2, t], xo).expect("extents match"),
            wo,
        )
    }

    /// Velocity `[B, P]` for particles `k: [B, P]`, surrogate predictions
    /// `u_hat: [B, S, T]`, observations and per-row `τ`.
    pub fn forward<B: Backend>(
        &self,
        be: &mut B,
        k: &B::Var,
        u_hat: &Tensor,
        obs: &ObsBatch,
        tau: &[f64],
    ) -> Result<B::Var, AdmError> {
        let b = tau.len();
        let (s, t, p) = (self.state_dim, self.n_steps, self.param_count);
        if u_hat.shape() != [b, s, t] || obs.dense.shape() != [b, s, t] || be.value(k).shape() != [b, p] {
            return Err(AdmError::Shape(format!(
                "u_hat {:?}, obs {:?}, k {:?} for batch {b}",
                u_hat.shape(),
                obs.dense.shape(),
                be.value(k).shape()
            )));
        }
        let (xu, wu, xo, wo) = self.encoder_inputs(u_hat, obs);
        let xu = be.constant(xu);
        let xo = be.constant(xo);
        let eu = self.lin(be, &xu, ENC_U, true)?;
        let eu = be.relu(&eu);
        let eu = be.time_pool(&eu, &wu)?;
        let eo = self.lin(be, &xo, ENC_OBS, true)?;
        let eo = be.relu(&eo);
        let eo = be.time_pool(&eo, &wo)?;
        let feats = be.concat_features(&[&eu, &eo, k])?;
        let h0 = self.lin(be, &feats, MERGE, false)?;
        let mut h = be.relu(&h0);

        let tf: Vec<f64> = tau
            .iter()
            .flat_map(|&x| [x, (std::f64::consts::PI * x).sin(), (std::f64::consts::PI * x).cos()])
            .collect();
        let tf = be.constant(Tensor::new(&[b, 3], tf)?);
        let cond = self.lin(be, &tf, TAU, false)?;
        let cond = be.relu(&cond);
        for i in 0..self.config.n_blocks {
            let o = BLOCK_BASE + PER_BLOCK * i;
            let u = self.lin(be, &h, (o, o + 1), false)?;
            let alpha = self.lin(be, &cond, (o + 2, o + 3), false)?;
            let beta = self.lin(be, &cond, (o + 4, o + 5), false)?;
            let u = be.film(&u, &alpha, &beta)?;
            let u = be.relu(&u);
            let u = self.lin(be, &u, (o + 6, o + 7), false)?;
            h = be.add(&h, &u)?;
        }
        let out = self.lin(be, &h, self.head_slots(), false)?;
        be.value(&out).check_finite("velocity")?;
        Ok(out)
    }

    /// Eval forward with no gradient state.
    pub fn velocity(&self, k: &Tensor, u_hat: &Tensor, obs: &ObsBatch, tau: &[f64]) -> Result<Tensor, AdmError> {
        let mut be = Eager;
        let kv = be.constant(k.clone());
        let v = self.forward(&mut be, &kv, u_hat, obs, tau)?;
        Ok(Arc::try_unwrap(v).unwrap_or_else(|a| (*a).clone()))
    }

    /// Zeroes the output head, giving a model whose velocity is identically 0.
    pub fn zero_head(&mut self) {
        let (w, b) = self.head_slots();
        self.params.get_mut(w).data_mut().fill(0.0);
        self.params.get_mut(b).data_mut().fill(0.0);
    }

    pub fn to_checkpoint(&self, kind: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(kind);
        let c = &self.config;
        ck.set("sigma_floor", format!("{:e}", c.sigma_floor));
        ck.set("tau_samples", c.tau_samples);
        ck.set("integration_steps", c.integration_steps);
        ck.set("epochs", c.epochs);
        ck.set("learning_rate", format!("{:e}", c.learning_rate));
        ck.set("batch_size", c.batch_size);
        ck.set("m_obs", c.m_obs);
        ck.set("hidden", c.hidden);
        ck.set("n_blocks", c.n_blocks);
        ck.set("state_dim", self.state_dim);
        ck.set("param_count", self.param_count);
        ck.set("n_steps", self.n_steps);
        for (name, t) in self.params.iter() {
            ck.tensors.push((name.to_string(), t.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, kind: &str) -> Result<Self, AdmError> {
        ck.expect_kind(kind)?;
        let config = AdmConfig {
            sigma_floor: ck.parse("sigma_floor")?,
            tau_samples: ck.parse("tau_samples")?,
            integration_steps: ck.parse("integration_steps")?,
            epochs: ck.parse("epochs")?,
            learning_rate: ck.parse("learning_rate")?,
            batch_size: ck.parse("batch_size")?,
            m_obs: ck.parse("m_obs")?,
            hidden: ck.parse("hidden")?,
            n_blocks: ck.parse("n_blocks")?,
        };
        let mut model = Self::new(
            config,
            ck.parse("state_dim")?,
            ck.parse("param_count")?,
            ck.parse("n_steps")?,
            SplitRng::new(0),
        )?;
        if ck.tensors.len() != model.params.len() {
            return Err(FormatError::Malformed(format!(
                "checkpoint has {} tensors, model needs {}",
                ck.tensors.len(),
                model.params.len()
            ))
            .into());
        }
        for slot in 0..model.params.len() {
            let name = model.params.name(slot).to_string();
            let t = ck.tensor(&name)?;
            if t.shape() != model.params.get(slot).shape() {
                return Err(FormatError::Malformed(format!("tensor `{name}` has shape {:?}", t.shape())).into());
            }
            *model.params.get_mut(slot) = t.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, kind: &str) -> Result<(), AdmError> {
        Ok(self.to_checkpoint(kind).save(path)?)
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self, AdmError> {
        Self::from_checkpoint(&Checkpoint::load(path)?, kind)
    }
}
