use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};

use super::{row_losses, BaselineConfig, BaselineError, InvertResult, PartialLoss};
use crate::adm::{split_results, ObsBatch};
use crate::cno::{encode_inputs, Surrogate};
use crate::datagen::SparseObservation;
use crate::numerics::{Backend, OptimizerKind, OptimizerState, SplitRng, Tape, Tensor};

/// Per-row losses at `k` and the gradient of their sum, with the surrogate
/// weights held constant.
fn loss_and_grad<S: Surrogate + ?Sized>(
    surrogate: &S,
    inputs: &Tensor,
    obs: &ObsBatch,
    k: &Tensor,
    loss: PartialLoss,
) -> Result<(Vec<f64>, Tensor), BaselineError> {
    let mut tape = Tape::frozen_params();
    let kv = tape.leaf(k.clone());
    let pred = surrogate.record(&mut tape, inputs, kv)?;
    let losses = row_losses(tape.value(&pred), obs, loss);
    let w = obs.loss_weight();
    let total = match loss {
        PartialLoss::L1 => tape.weighted_l1(&pred, &obs.dense, Some(&w), 1.0)?,
        PartialLoss::HalfSquared => {
            let target = tape.constant(obs.dense.clone());
            let diff = tape.sub(&pred, &target)?;
            let sq = tape.mul(&diff, &diff)?;
            let half_w = tape.constant(w.map(|x| 0.5 * x));
            let weighted = tape.mul(&sq, &half_w)?;
            tape.sum_all(&weighted)
        }
    };
    let grads = tape.backward(total)?;
    Ok((losses, grads.wrt(&tape, kv)))
}

struct Problem {
    inputs: Tensor,
    obs: ObsBatch,
}

fn setup(obs: &SparseObservation, x0: &[f64], k0: &Tensor, p: usize) -> Result<Problem, BaselineError> {
    if k0.rank() != 2 || k0.dim(1) != p || k0.dim(0) == 0 {
        return Err(BaselineError::Config(format!("initializations must be [n, {p}], got {:?}", k0.shape())));
    }
    let n = k0.dim(0);
    Ok(Problem {
        inputs: encode_inputs(&vec![obs.clone(); n], x0)?,
        obs: ObsBatch::repeat(obs, n)?,
    })
}

/// Gradient descent on the partial loss from every row of `k0: [n, P]`,
/// using the optimizer named in the config. The history holds the loss
/// before each update.
pub fn gd_invert<S: Surrogate + ?Sized>(
    surrogate: &S,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    cfg: &BaselineConfig,
) -> Result<Vec<InvertResult>, BaselineError> {
    cfg.validate()?;
    let clock = Instant::now();
    let pr = setup(obs, x0, k0, surrogate.param_count())?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate());
    let mut k = k0.clone();
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (losses, g) = loss_and_grad(surrogate, &pr.inputs, &pr.obs, &k, cfg.loss)?;
        if !g.is_finite() || losses.iter().any(|l| !l.is_finite()) {
            return Err(BaselineError::NanGradient(it));
        }
        history.push(losses);
        opt.step(&mut [&mut k], &[&g])?;
    }
    let tag = match cfg.optimizer {
        OptimizerKind::Sgd => "gd_sgd",
        OptimizerKind::Adam => "gd_adam",
    };
    Ok(split_results(tag, k0, &k, &history, clock.elapsed().as_secs_f64()))
}

/// Langevin dynamics `k ← k − λ∇L + √(2λT)·ξ`.
pub fn sgld_invert<S: Surrogate + ?Sized>(
    surrogate: &S,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    cfg: &BaselineConfig,
    rng: SplitRng,
) -> Result<Vec<InvertResult>, BaselineError> {
    cfg.validate()?;
    let clock = Instant::now();
    let pr = setup(obs, x0, k0, surrogate.param_count())?;
    let mut rng = rng.rng();
    let lr = cfg.sgld_learning_rate;
    let noise = (2.0 * lr * cfg.sgld_temperature).sqrt();
    let mut k = k0.clone();
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (losses, g) = loss_and_grad(surrogate, &pr.inputs, &pr.obs, &k, cfg.loss)?;
        if !g.is_finite() || losses.iter().any(|l| !l.is_finite()) {
            return Err(BaselineError::NanGradient(it));
        }
        history.push(losses);
        for (x, gx) in k.data_mut().iter_mut().zip(g.data()) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *x += -lr * gx + noise * xi;
        }
    }
    Ok(split_results("sgld", k0, &k, &history, clock.elapsed().as_secs_f64()))
}
