//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Nodes are appended in evaluation order, so the index order is a
//! topological order and the reverse sweep simply walks indices backwards.

use std::sync::Arc;

use crate::numerics::backend::{check_same, BatchStats, Res};
use crate::numerics::{instrument, kernels, Backend, NumericsError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    SumAll(usize),
    Reshape(usize),
    LinearCh { x: usize, w: usize, b: usize },
    Linear { x: usize, w: usize, b: usize },
    Spectral { x: usize, wre: usize, wim: usize, modes: usize, xs: Vec<f64> },
    BatchNorm { x: usize, gamma: usize, beta: usize, x_hat: Tensor, inv_std: Vec<f64> },
    BatchNormEval { x: usize, gamma: usize, beta: usize, x_hat: Tensor, inv_std: Vec<f64> },
    Film { x: usize, alpha: usize, beta: usize },
    Bmm { a: usize, ta: bool, b: usize, tb: bool },
    Softmax(usize),
    TimePool { x: usize, w: Tensor },
    Concat { parts: Vec<usize> },
    WeightedL1 { pred: usize, target: Tensor, weight: Option<Tensor>, norm: f64 },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward pair.
pub struct Tape {
    nodes: Vec<Node>,
    slots: Vec<Option<(usize, Vec<usize>)>>,
    track_params: bool,
}

impl Tape {
    /// A tape that treats model weights registered via [`Backend::param`] as
    /// trainable leaves.
    pub fn new() -> Self {
        Self::with_params(true)
    }

    /// A tape on which model weights are constants. Only leaves created with
    /// [`Tape::leaf`] receive gradients.
    pub fn frozen_params() -> Self {
        Self::with_params(false)
    }

    fn with_params(track_params: bool) -> Self {
        instrument::bump_tapes();
        Self {
            nodes: Vec::new(),
            slots: Vec::new(),
            track_params,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable input that is not a model weight.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Arc::new(t), Op::Leaf, true)
    }

    fn push(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        instrument::bump_nodes();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn t(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(NumericsError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        instrument::bump_grads();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let acc = |j: usize, d: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.rg(j) {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => existing.axpy(1.0, &d),
                    slot @ None => {
                        instrument::bump_grads();
                        *slot = Some(d);
                    }
                }
            };
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, g.zip_map(self.t(*b), |d, y| d * y), &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, g.zip_map(self.t(*a), |d, x| d * x), &mut grads);
                    }
                }
                Op::Scale(a, s) => acc(*a, g.map(|v| v * s), &mut grads),
                Op::Relu(a) => acc(
                    *a,
                    g.zip_map(self.t(*a), |d, x| if x > 0.0 { d } else { 0.0 }),
                    &mut grads,
                ),
                Op::SumAll(a) => acc(*a, Tensor::full(self.t(*a).shape(), g.item()), &mut grads),
                Op::Reshape(a) => acc(*a, g.reshape(self.t(*a).shape()).expect("same length"), &mut grads),
                Op::LinearCh { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_ch_vjp(self.t(*x), self.t(*w), &g, self.rg(*x), self.rg(*w));
                    if let Some(dx) = dx {
                        acc(*x, dx, &mut grads);
                    }
                    if let Some(dw) = dw {
                        acc(*w, dw, &mut grads);
                    }
                    acc(*b, db, &mut grads);
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_vjp(self.t(*x), self.t(*w), &g, self.rg(*x), self.rg(*w));
                    if let Some(dx) = dx {
                        acc(*x, dx, &mut grads);
                    }
                    if let Some(dw) = dw {
                        acc(*w, dw, &mut grads);
                    }
                    acc(*b, db, &mut grads);
                }
                Op::Spectral { x, wre, wim, modes, xs } => {
                    let need_w = self.rg(*wre) || self.rg(*wim);
                    let (dx, dw) = kernels::spectral_conv_vjp(
                        xs,
                        self.t(*x).shape(),
                        self.t(*wre),
                        self.t(*wim),
                        *modes,
                        &g,
                        self.rg(*x),
                        need_w,
                    );
                    if let Some(dx) = dx {
                        acc(*x, dx, &mut grads);
                    }
                    if let Some((dre, dim)) = dw {
                        acc(*wre, dre, &mut grads);
                        acc(*wim, dim, &mut grads);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                } => {
                    let (dx, dg, db) = kernels::batch_norm_train_vjp(x_hat, inv_std, self.t(*gamma), &g);
                    acc(*x, dx, &mut grads);
                    acc(*gamma, dg, &mut grads);
                    acc(*beta, db, &mut grads);
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                } => {
                    let (dx, dg, db) = kernels::batch_norm_eval_vjp(x_hat, inv_std, self.t(*gamma), &g);
                    acc(*x, dx, &mut grads);
                    acc(*gamma, dg, &mut grads);
                    acc(*beta, db, &mut grads);
                }
                Op::Film { x, alpha, beta } => {
                    let (dx, da, db) = kernels::film_vjp(self.t(*x), self.t(*alpha), &g);
                    acc(*x, dx, &mut grads);
                    acc(*alpha, da, &mut grads);
                    acc(*beta, db, &mut grads);
                }
                Op::Bmm { a, ta, b, tb } => {
                    let (da, db) = kernels::bmm_vjp(self.t(*a), *ta, self.t(*b), *tb, &g, self.rg(*a), self.rg(*b));
                    if let Some(da) = da {
                        acc(*a, da, &mut grads);
                    }
                    if let Some(db) = db {
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Softmax(a) => acc(*a, kernels::softmax_last_vjp(&node.value, &g), &mut grads),
                Op::TimePool { x, w } => acc(*x, kernels::time_pool_vjp(self.t(*x).shape(), w, &g), &mut grads),
                Op::Concat { parts } => {
                    let widths: Vec<usize> = parts.iter().map(|&p| self.t(p).dim(1)).collect();
                    for (p, d) in parts.iter().zip(kernels::concat_features_vjp(&widths, &g)) {
                        acc(*p, d, &mut grads);
                    }
                }
                Op::WeightedL1 {
                    pred,
                    target,
                    weight,
                    norm,
                } => acc(
                    *pred,
                    kernels::weighted_l1_vjp(self.t(*pred), target, weight.as_ref(), *norm, g.item()),
                    &mut grads,
                ),
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradients for every registered weight slot, zero where the slot was
    /// registered but unreachable from the loss.
    pub fn slot_gradients(&self, grads: &Gradients, n_slots: usize) -> Vec<Option<Tensor>> {
        (0..n_slots)
            .map(|s| {
                self.slots.get(s).and_then(|e| e.as_ref()).map(|(node, shape)| {
                    grads.grads[*node]
                        .clone()
                        .unwrap_or_else(|| Tensor::zeros(shape))
                })
            })
            .collect()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// d(loss)/d(var); zero when `var` does not influence the loss.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tape.nodes[var.0].value.shape()))
    }
}

impl Backend for Tape {
    type Var = Var;
    const RECORDS: bool = true;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(Arc::new(t), Op::Constant, false)
    }

    fn param(&mut self, slot: usize, t: &Arc<Tensor>) -> Var {
        if !self.track_params {
            return self.push(Arc::clone(t), Op::Constant, false);
        }
        let v = self.push(Arc::clone(t), Op::Leaf, true);
        if self.slots.len() <= slot {
            self.slots.resize(slot + 1, None);
        }
        self.slots[slot] = Some((v.0, t.shape().to_vec()));
        v
    }

    fn add(&mut self, a: &Var, b: &Var) -> Res<Var> {
        check_same(self.t(a.0), self.t(b.0))?;
        let v = self.t(a.0).zip_map(self.t(b.0), |x, y| x + y);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Arc::new(v), Op::Add(a.0, b.0), rg))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Res<Var> {
        check_same(self.t(a.0), self.t(b.0))?;
        let v = self.t(a.0).zip_map(self.t(b.0), |x, y| x - y);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Arc::new(v), Op::Sub(a.0, b.0), rg))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Res<Var> {
        check_same(self.t(a.0), self.t(b.0))?;
        let v = self.t(a.0).zip_map(self.t(b.0), |x, y| x * y);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Arc::new(v), Op::Mul(a.0, b.0), rg))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.t(a.0).map(|x| x * s);
        let rg = self.rg(a.0);
        self.push(Arc::new(v), Op::Scale(a.0, s), rg)
    }

    fn relu(&mut self, a: &Var) -> Var {
        let v = self.t(a.0).map(|x| x.max(0.0));
        let rg = self.rg(a.0);
        self.push(Arc::new(v), Op::Relu(a.0), rg)
    }

    fn sum_all(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.t(a.0).sum());
        let rg = self.rg(a.0);
        self.push(Arc::new(v), Op::SumAll(a.0), rg)
    }

    fn reshape(&mut self, a: &Var, shape: &[usize]) -> Res<Var> {
        let v = self.t(a.0).clone().reshape(shape)?;
        let rg = self.rg(a.0);
        Ok(self.push(Arc::new(v), Op::Reshape(a.0), rg))
    }

    fn linear_ch(&mut self, x: &Var, w: &Var, b: &Var) -> Res<Var> {
        let v = kernels::linear_ch(self.t(x.0), self.t(w.0), self.t(b.0))?;
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(Arc::new(v), Op::LinearCh { x: x.0, w: w.0, b: b.0 }, rg))
    }

    fn linear(&mut self, x: &Var, w: &Var, b: &Var) -> Res<Var> {
        let v = kernels::linear(self.t(x.0), self.t(w.0), self.t(b.0))?;
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(Arc::new(v), Op::Linear { x: x.0, w: w.0, b: b.0 }, rg))
    }

    fn spectral_conv(&mut self, x: &Var, wre: &Var, wim: &Var, modes: usize) -> Res<Var> {
        let (y, xs) = kernels::spectral_conv(self.t(x.0), self.t(wre.0), self.t(wim.0), modes)?;
        let rg = self.rg(x.0) || self.rg(wre.0) || self.rg(wim.0);
        Ok(self.push(
            Arc::new(y),
            Op::Spectral {
                x: x.0,
                wre: wre.0,
                wim: wim.0,
                modes,
                xs,
            },
            rg,
        ))
    }

    fn batch_norm_train(&mut self, x: &Var, gamma: &Var, beta: &Var) -> Res<(Var, BatchStats)> {
        let out = kernels::batch_norm_train(self.t(x.0), self.t(gamma.0), self.t(beta.0))?;
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        let stats = BatchStats {
            mean: out.mean,
            var: out.var,
        };
        let v = self.push(
            Arc::new(out.y),
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                x_hat: out.x_hat,
                inv_std: out.inv_std,
            },
            rg,
        );
        Ok((v, stats))
    }

    fn batch_norm_eval(&mut self, x: &Var, gamma: &Var, beta: &Var, mean: &Tensor, var: &Tensor) -> Res<Var> {
        let (y, x_hat) = kernels::batch_norm_eval(self.t(x.0), self.t(gamma.0), self.t(beta.0), mean, var)?;
        let inv_std = var.data().iter().map(|v| 1.0 / (v + kernels::BN_EPS).sqrt()).collect();
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        Ok(self.push(
            Arc::new(y),
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                x_hat,
                inv_std,
            },
            rg,
        ))
    }

    fn film(&mut self, x: &Var, alpha: &Var, beta: &Var) -> Res<Var> {
        let v = kernels::film(self.t(x.0), self.t(alpha.0), self.t(beta.0))?;
        let rg = self.rg(x.0) || self.rg(alpha.0) || self.rg(beta.0);
        Ok(self.push(
            Arc::new(v),
            Op::Film {
                x: x.0,
                alpha: alpha.0,
                beta: beta.0,
            },
            rg,
        ))
    }

    fn bmm(&mut self, a: &Var, ta: bool, b: &Var, tb: bool) -> Res<Var> {
        let v = kernels::bmm(self.t(a.0), ta, self.t(b.0), tb)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Arc::new(v), Op::Bmm { a: a.0, ta, b: b.0, tb }, rg))
    }

    fn softmax_last(&mut self, a: &Var) -> Var {
        let v = kernels::softmax_last(self.t(a.0));
        let rg = self.rg(a.0);
        self.push(Arc::new(v), Op::Softmax(a.0), rg)
    }

    fn time_pool(&mut self, x: &Var, w: &Tensor) -> Res<Var> {
        let v = kernels::time_pool(self.t(x.0), w)?;
        let rg = self.rg(x.0);
        Ok(self.push(Arc::new(v), Op::TimePool { x: x.0, w: w.clone() }, rg))
    }

    fn concat_features(&mut self, parts: &[&Var]) -> Res<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.t(p.0)).collect();
        let v = kernels::concat_features(&refs)?;
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(
            Arc::new(v),
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            rg,
        ))
    }

    fn weighted_l1(&mut self, pred: &Var, target: &Tensor, weight: Option<&Tensor>, norm: f64) -> Res<Var> {
        let v = kernels::weighted_l1(self.t(pred.0), target, weight, norm)?;
        let rg = self.rg(pred.0);
        Ok(self.push(
            Arc::new(Tensor::scalar(v)),
            Op::WeightedL1 {
                pred: pred.0,
                target: target.clone(),
                weight: weight.cloned(),
                norm,
            },
            rg,
        ))
    }
}
