use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use super::{CnoConfig, CnoError, Surrogate};
use crate::binio::FormatError;
use crate::checkpoint::Checkpoint;
use crate::datagen::SparseObservation;
use crate::numerics::{instrument, Backend, BatchStats, Eager, ParamSet, SplitRng, Tape, Tensor, Var};

/// Batch-normalization behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are returned for the caller to fold in.
    Train,
    /// Stored running statistics; deterministic.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
struct BlockSlots {
    r_re: usize,
    r_im: usize,
    skip: (usize, usize),
    bn_gamma: usize,
    bn_beta: usize,
    film_alpha: (usize, usize),
    film_beta: (usize, usize),
    out: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
struct Slots {
    lift: (usize, usize),
    k_embed: [(usize, usize); 2],
    blocks: Vec<BlockSlots>,
    attn: Option<[(usize, usize); 3]>,
    head: [(usize, usize); 2],
}

/// Weights, batch-norm running statistics and configuration of the
/// conditional operator.
#[derive(Clone, Debug, PartialEq)]
pub struct CnoModel {
    pub config: CnoConfig,
    pub state_dim: usize,
    pub param_count: usize,
    pub n_steps: usize,
    pub params: ParamSet,
    /// Per block `(running_mean, running_var)`, each `[d, n_steps]`.
    pub running: Vec<(Tensor, Tensor)>,
    slots: Slots,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("extents match")
}

fn dense(ps: &mut ParamSet, name: &str, out: usize, inp: usize, rng: &mut impl Rng) -> (usize, usize) {
    let bound = 1.0 / (inp as f64).sqrt();
    let w = ps.push(format!("{name}.w"), uniform(&[out, inp], bound, rng));
    let b = ps.push(format!("{name}.b"), uniform(&[out], bound, rng));
    (w, b)
}

/// Per-timestep input channels `[masked values (S), mask, t/t_end, x0 (S)]`
/// for a batch of observations sharing the initial state `x0`.
pub fn encode_inputs(obs: &[SparseObservation], x0: &[f64]) -> Result<Tensor, CnoError> {
    let first = obs.first().ok_or_else(|| CnoError::Shape("empty observation batch".into()))?;
    let (s, t) = (first.values.dim(0), first.n_steps());
    if x0.len() != s {
        return Err(CnoError::Shape(format!("x0 has {} entries for {s} species", x0.len())));
    }
    let ch = 2 * s + 2;
    let mut data = vec![0.0; obs.len() * ch * t];
    for (b, o) in obs.iter().enumerate() {
        if o.values.dim(0) != s || o.n_steps() != t {
            return Err(CnoError::Shape("observations differ in extents".into()));
        }
        let base = &mut data[b * ch * t..(b + 1) * ch * t];
        let m = o.indices.len();
        for sp in 0..s {
            for (j, &i) in o.indices.iter().enumerate() {
                base[sp * t + i] = o.values.data()[sp * m + j];
            }
            base[(s + 2 + sp) * t..(s + 3 + sp) * t].fill(x0[sp]);
        }
        for &i in &o.indices {
            base[s * t + i] = 1.0;
        }
        for i in 0..t {
            base[(s + 1) * t + i] = if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 };
        }
    }
    Ok(Tensor::new(&[obs.len(), ch, t], data).expect("extents match"))
}

impl CnoModel {
    pub fn new(
        config: CnoConfig,
        state_dim: usize,
        param_count: usize,
        n_steps: usize,
        seed: SplitRng,
    ) -> Result<Self, CnoError> {
        config.validate(n_steps)?;
        let mut rng = seed.rng();
        let d = config.latent_dim;
        let m = config.n_modes;
        let mut ps = ParamSet::new();
        let lift = dense(&mut ps, "lift", d, 2 * state_dim + 2, &mut rng);
        let k_embed = [
            dense(&mut ps, "kembed.0", d, param_count, &mut rng),
            dense(&mut ps, "kembed.1", d, d, &mut rng),
        ];
        let mut blocks = Vec::new();
        let spectral_scale = 1.0 / (d * d) as f64;
        for i in 0..config.n_blocks {
            let p = format!("block.{i}");
            let r_re = ps.push(
                format!("{p}.spectral.re"),
                uniform(&[d, d, m], 1.0, &mut rng).map(|v| v.abs() * spectral_scale),
            );
            let r_im = ps.push(
                format!("{p}.spectral.im"),
                uniform(&[d, d, m], 1.0, &mut rng).map(|v| v.abs() * spectral_scale),
            );
            let skip = dense(&mut ps, &format!("{p}.skip"), d, d, &mut rng);
            let bn_gamma = ps.push(format!("{p}.bn.gamma"), Tensor::ones(&[d, n_steps]));
            let bn_beta = ps.push(format!("{p}.bn.beta"), Tensor::zeros(&[d, n_steps]));
            let film_alpha = dense(&mut ps, &format!("{p}.film.alpha"), d, d, &mut rng);
            let film_beta = dense(&mut ps, &format!("{p}.film.beta"), d, d, &mut rng);
            let out = dense(&mut ps, &format!("{p}.out"), d, d, &mut rng);
            blocks.push(BlockSlots {
                r_re,
                r_im,
                skip,
                bn_gamma,
                bn_beta,
                film_alpha,
                film_beta,
                out,
            });
        }
        let attn = config.attention.then(|| {
            [
                dense(&mut ps, "attn.q", d, d, &mut rng),
                dense(&mut ps, "attn.k", d, d, &mut rng),
                dense(&mut ps, "attn.v", d, d, &mut rng),
            ]
        });
        let head = [
            dense(&mut ps, "head.0", d, d, &mut rng),
            dense(&mut ps, "head.1", state_dim, d, &mut rng),
        ];
        let running = (0..config.n_blocks)
            .map(|_| (Tensor::zeros(&[d, n_steps]), Tensor::ones(&[d, n_steps])))
            .collect();
        Ok(Self {
            config,
            state_dim,
            param_count,
            n_steps,
            params: ps,
            running,
            slots: Slots {
                lift,
                k_embed,
                blocks,
                attn,
                head,
            },
        })
    }

    pub fn input_channels(&self) -> usize {
        2 * self.state_dim + 2
    }

    fn p<B: Backend>(&self, be: &mut B, slot: usize) -> B::Var {
        be.param(slot, self.params.get(slot))
    }

    fn lin_ch<B: Backend>(&self, be: &mut B, x: &B::Var, (w, b): (usize, usize)) -> Result<B::Var, CnoError> {
        let (w, b) = (self.p(be, w), self.p(be, b));
        Ok(be.linear_ch(x, &w, &b)?)
    }

    fn lin<B: Backend>(&self, be: &mut B, x: &B::Var, (w, b): (usize, usize)) -> Result<B::Var, CnoError> {
        let (w, b) = (self.p(be, w), self.p(be, b));
        Ok(be.linear(x, &w, &b)?)
    }

    /// Lifts the input channels to `z_feat0: [B, d, T]` and embeds the
    /// parameters as `z_k: [B, d]`.
    pub fn embed<B: Backend>(&self, be: &mut B, inputs: &Tensor, k: &B::Var) -> Result<(B::Var, B::Var), CnoError> {
        let expect = [inputs.dim(0), self.input_channels(), self.n_steps];
        if inputs.shape() != expect {
            return Err(CnoError::Shape(format!("inputs {:?}, expected {expect:?}", inputs.shape())));
        }
        let kv = be.value(k);
        if kv.shape() != [inputs.dim(0), self.param_count] {
            return Err(CnoError::Shape(format!(
                "parameters {:?}, expected [{}, {}]",
                kv.shape(),
                inputs.dim(0),
                self.param_count
            )));
        }
        let x = be.constant(inputs.clone());
        let z0 = self.lin_ch(be, &x, self.slots.lift)?;
        let h = self.lin(be, k, self.slots.k_embed[0])?;
        let h = be.relu(&h);
        let zk = self.lin(be, &h, self.slots.k_embed[1])?;
        Ok((z0, zk))
    }

    /// One conditioned block:
    /// `out(relu(BN(spectral(z) + skip(z)))·(1 + α(z_k)) + β(z_k))`.
    pub fn block<B: Backend>(
        &self,
        be: &mut B,
        index: usize,
        z: &B::Var,
        zk: &B::Var,
        mode: Mode,
    ) -> Result<(B::Var, Option<BatchStats>), CnoError> {
        let s = &self.slots.blocks[index];
        let (re, im) = (self.p(be, s.r_re), self.p(be, s.r_im));
        let spec = be.spectral_conv(z, &re, &im, self.config.n_modes)?;
        let skip = self.lin_ch(be, z, s.skip)?;
        let pre = be.add(&spec, &skip)?;
        let (gamma, beta) = (self.p(be, s.bn_gamma), self.p(be, s.bn_beta));
        let (c, stats) = match mode {
            Mode::Train => {
                let (c, st) = be.batch_norm_train(&pre, &gamma, &beta)?;
                (c, Some(st))
            }
            Mode::Eval => {
                let (mean, var) = &self.running[index];
                (be.batch_norm_eval(&pre, &gamma, &beta, mean, var)?, None)
            }
        };
        let h = be.relu(&c);
        let alpha = self.lin(be, zk, s.film_alpha)?;
        let shift = self.lin(be, zk, s.film_beta)?;
        let h = be.film(&h, &alpha, &shift)?;
        Ok((self.lin_ch(be, &h, s.out)?, stats))
    }

    /// `zL + V(zL)·softmax(Q(z0)ᵀK(zL)/√d)` with attention over time.
    /// Returns `zL` unchanged when attention is disabled.
    pub fn attend<B: Backend>(&self, be: &mut B, z0: &B::Var, zl: &B::Var) -> Result<B::Var, CnoError> {
        let Some([q, k, v]) = self.slots.attn else {
            return Ok(zl.clone());
        };
        let q = self.lin_ch(be, z0, q)?;
        let k = self.lin_ch(be, zl, k)?;
        let v = self.lin_ch(be, zl, v)?;
        let scores = be.bmm(&q, true, &k, false)?;
        let scores = be.scale(&scores, 1.0 / (self.config.latent_dim as f64).sqrt());
        let attn = be.softmax_last(&scores);
        let mixed = be.bmm(&v, false, &attn, true)?;
        Ok(be.add(zl, &mixed)?)
    }

    /// Attention weights `[B, T_query, T_key]` for inspection.
    pub fn attention_weights(&self, inputs: &Tensor, k: &Tensor) -> Result<Option<Tensor>, CnoError> {
        let Some([q, kk, _]) = self.slots.attn else {
            return Ok(None);
        };
        let mut be = Eager;
        let kv = be.constant(k.clone());
        let (z0, zk) = self.embed(&mut be, inputs, &kv)?;
        let mut z = z0.clone();
        for i in 0..self.config.n_blocks {
            z = self.block(&mut be, i, &z, &zk, Mode::Eval)?.0;
        }
        let q = self.lin_ch(&mut be, &z0, q)?;
        let key = self.lin_ch(&mut be, &z, kk)?;
        let scores = be.bmm(&q, true, &key, false)?;
        let scores = be.scale(&scores, 1.0 / (self.config.latent_dim as f64).sqrt());
        Ok(Some(be.softmax_last(&scores).as_ref().clone()))
    }

    pub fn head<B: Backend>(&self, be: &mut B, z: &B::Var) -> Result<B::Var, CnoError> {
        let h = self.lin_ch(be, z, self.slots.head[0])?;
        let h = be.relu(&h);
        self.lin_ch(be, &h, self.slots.head[1])
    }

    /// Full forward pass; `k: [B, P]` in unit space, output `[B, S, T]` in
    /// standardized space.
    pub fn forward<B: Backend>(
        &self,
        be: &mut B,
        inputs: &Tensor,
        k: &B::Var,
        mode: Mode,
    ) -> Result<(B::Var, Vec<BatchStats>), CnoError> {
        if B::RECORDS {
            instrument::note_surrogate_recording();
        }
        let (z0, zk) = self.embed(be, inputs, k)?;
        let mut z = z0.clone();
        let mut stats = Vec::new();
        for i in 0..self.config.n_blocks {
            let (next, st) = self.block(be, i, &z, &zk, mode)?;
            stats.extend(st);
            z = next;
        }
        let z = self.attend(be, &z0, &z)?;
        let out = self.head(be, &z)?;
        be.value(&out).check_finite("surrogate output")?;
        Ok((out, stats))
    }

    /// Eval-mode forward without any gradient machinery.
    pub fn predict(&self, inputs: &Tensor, k: &Tensor) -> Result<Tensor, CnoError> {
        let mut be = Eager;
        let kv = be.constant(k.clone());
        let (y, _) = self.forward(&mut be, inputs, &kv, Mode::Eval)?;
        Ok(Arc::try_unwrap(y).unwrap_or_else(|a| (*a).clone()))
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running(&mut self, stats: &[BatchStats], momentum: f64) {
        for ((mean, var), st) in self.running.iter_mut().zip(stats) {
            for (r, b) in mean.data_mut().iter_mut().zip(&st.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            for (r, b) in var.data_mut().iter_mut().zip(&st.var) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("cno");
        let c = &self.config;
        ck.set("latent_dim", c.latent_dim);
        ck.set("n_modes", c.n_modes);
        ck.set("n_blocks", c.n_blocks);
        ck.set("m_train", c.m_train);
        ck.set("epochs", c.epochs);
        ck.set("learning_rate", format!("{:e}", c.learning_rate));
        ck.set("batch_size", c.batch_size);
        ck.set("attention", c.attention);
        ck.set("fixed_observations", c.fixed_observations);
        ck.set("state_dim", self.state_dim);
        ck.set("param_count", self.param_count);
        ck.set("n_steps", self.n_steps);
        for (name, t) in self.params.iter() {
            ck.tensors.push((name.to_string(), t.clone()));
        }
        for (i, (m, v)) in self.running.iter().enumerate() {
            ck.tensors.push((format!("block.{i}.bn.running_mean"), m.clone()));
            ck.tensors.push((format!("block.{i}.bn.running_var"), v.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CnoError> {
        ck.expect_kind("cno")?;
        let config = CnoConfig {
            latent_dim: ck.parse("latent_dim")?,
            n_modes: ck.parse("n_modes")?,
            n_blocks: ck.parse("n_blocks")?,
            m_train: ck.parse("m_train")?,
            epochs: ck.parse("epochs")?,
            learning_rate: ck.parse("learning_rate")?,
            batch_size: ck.parse("batch_size")?,
            attention: ck.parse("attention")?,
            fixed_observations: ck.parse("fixed_observations")?,
        };
        let mut model = Self::new(
            config,
            ck.parse("state_dim")?,
            ck.parse("param_count")?,
            ck.parse("n_steps")?,
            SplitRng::new(0),
        )?;
        let expected = model.params.len() + 2 * model.running.len();
        if ck.tensors.len() != expected {
            return Err(FormatError::Malformed(format!(
                "checkpoint has {} tensors, model needs {expected}",
                ck.tensors.len()
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
        for i in 0..model.running.len() {
            let m = ck.tensor(&format!("block.{i}.bn.running_mean"))?;
            let v = ck.tensor(&format!("block.{i}.bn.running_var"))?;
            let shape = model.running[i].0.shape().to_vec();
            if m.shape() != shape || v.shape() != shape {
                return Err(FormatError::Malformed(format!("running statistics of block {i} misshapen")).into());
            }
            model.running[i] = (m.clone(), v.clone());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), CnoError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, CnoError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Surrogate for CnoModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn param_count(&self) -> usize {
        self.param_count
    }
    fn n_steps(&self) -> usize {
        self.n_steps
    }
    fn predict(&self, inputs: &Tensor, k: &Tensor) -> Result<Tensor, CnoError> {
        CnoModel::predict(self, inputs, k)
    }
    fn record(&self, tape: &mut Tape, inputs: &Tensor, k: Var) -> Result<Var, CnoError> {
        Ok(self.forward(tape, inputs, &k, Mode::Eval)?.0)
    }
}
