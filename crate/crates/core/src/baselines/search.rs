use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{partial_losses, BaselineConfig, BaselineError, InvertResult};
use crate::adm::ObsBatch;
use crate::cno::{encode_inputs, Surrogate};
use crate::datagen::SparseObservation;
use crate::numerics::{SplitRng, Tensor};

fn check_init(k0: &Tensor, p: usize) -> Result<usize, BaselineError> {
    if k0.rank() != 2 || k0.dim(1) != p || k0.dim(0) == 0 {
        return Err(BaselineError::Config(format!("initializations must be [n, {p}], got {:?}", k0.shape())));
    }
    Ok(k0.dim(0))
}

/// Random-walk Metropolis on `exp(−L/T)` from every row of `k0`; each run
/// returns the lowest-loss state visited. The history holds the chain's
/// loss after each accept/reject decision.
pub fn mcmc_invert<S: Surrogate + ?Sized>(
    surrogate: &S,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    cfg: &BaselineConfig,
    rng: SplitRng,
) -> Result<Vec<InvertResult>, BaselineError> {
    cfg.validate()?;
    let clock = Instant::now();
    let p = surrogate.param_count();
    let n = check_init(k0, p)?;
    let inputs = encode_inputs(&vec![obs.clone(); n], x0)?;
    let ob = ObsBatch::repeat(obs, n)?;
    let mut rng = rng.rng();

    let mut k = k0.clone();
    let mut loss = partial_losses(surrogate, &inputs, &ob, &k, cfg.loss)?;
    let mut best = k.clone();
    let mut best_loss = loss.clone();
    let mut accepted = vec![0usize; n];
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut prop = k.clone();
        for x in prop.data_mut() {
            let xi: f64 = rng.sample(StandardNormal);
            *x += cfg.mcmc_proposal_scale * xi;
        }
        let new_loss = partial_losses(surrogate, &inputs, &ob, &prop, cfg.loss)?;
        for i in 0..n {
            let u: f64 = rng.gen();
            let take = new_loss[i] <= loss[i]
                || (cfg.mcmc_temperature > 0.0 && u < ((loss[i] - new_loss[i]) / cfg.mcmc_temperature).exp());
            if take {
                accepted[i] += 1;
                loss[i] = new_loss[i];
                k.data_mut()[i * p..(i + 1) * p].copy_from_slice(&prop.data()[i * p..(i + 1) * p]);
                if loss[i] < best_loss[i] {
                    best_loss[i] = loss[i];
                    best.data_mut()[i * p..(i + 1) * p].copy_from_slice(&k.data()[i * p..(i + 1) * p]);
                }
            }
        }
        history.push(loss.clone());
    }
    let elapsed = clock.elapsed().as_secs_f64();
    Ok((0..n)
        .map(|i| InvertResult {
            method: "mcmc".into(),
            init: k0.data()[i * p..(i + 1) * p].to_vec(),
            k_hat: best.data()[i * p..(i + 1) * p].to_vec(),
            history: history.iter().map(|h| h[i]).collect(),
            wall_time_seconds: elapsed / n as f64,
            acceptance_rate: Some(accepted[i] as f64 / cfg.iterations as f64),
        })
        .collect())
}

/// ES-lite: a `(μ, λ)` evolution strategy with one isotropic step size per
/// run. Each generation evaluates the mean and `λ` offspring in one batch,
/// recombines the best `μ` offspring and moves `ln σ` by
/// `c·(p_success − 1/5)/(4/5)`, where a success is an offspring that beats
/// the current mean. Returns the best point seen; the history is the
/// best-so-far loss.
pub fn es_invert<S: Surrogate + ?Sized>(
    surrogate: &S,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    cfg: &BaselineConfig,
    rng: SplitRng,
) -> Result<Vec<InvertResult>, BaselineError> {
    cfg.validate()?;
    let clock = Instant::now();
    let p = surrogate.param_count();
    let n = check_init(k0, p)?;
    let (lam, mu) = (cfg.es_population, cfg.es_parents);
    let rows = n * (lam + 1);
    let inputs = encode_inputs(&vec![obs.clone(); rows], x0)?;
    let ob = ObsBatch::repeat(obs, rows)?;
    let mut rng = rng.rng();

    let mut mean = k0.clone();
    let mut sigma = vec![cfg.es_sigma; n];
    let mut best = k0.clone();
    let mut best_loss = vec![f64::INFINITY; n];
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        // row layout per run: [mean, offspring 1..=λ]
        let mut pop = Vec::with_capacity(rows * p);
        for i in 0..n {
            let m = &mean.data()[i * p..(i + 1) * p];
            pop.extend_from_slice(m);
            for _ in 0..lam {
                pop.extend(m.iter().map(|&x| {
                    let xi: f64 = rng.sample(StandardNormal);
                    x + sigma[i] * xi
                }));
            }
        }
        let pop = Tensor::new(&[rows, p], pop)?;
        let losses = partial_losses(surrogate, &inputs, &ob, &pop, cfg.loss)?;
        for i in 0..n {
            let base = i * (lam + 1);
            let row = |j: usize| &pop.data()[(base + j) * p..(base + j + 1) * p];
            for j in 0..=lam {
                if losses[base + j] < best_loss[i] {
                    best_loss[i] = losses[base + j];
                    best.data_mut()[i * p..(i + 1) * p].copy_from_slice(row(j));
                }
            }
            let mut order: Vec<usize> = (1..=lam).collect();
            order.sort_by(|&a, &b| losses[base + a].total_cmp(&losses[base + b]));
            let m = &mut mean.data_mut()[i * p..(i + 1) * p];
            m.fill(0.0);
            for &j in &order[..mu] {
                for (x, y) in m.iter_mut().zip(row(j)) {
                    *x += y / mu as f64;
                }
            }
            let successes = (1..=lam).filter(|&j| losses[base + j] < losses[base]).count();
            let rate = successes as f64 / lam as f64;
            sigma[i] *= (cfg.es_adapt * (rate - 0.2) / 0.8).exp();
        }
        history.push(best_loss.clone());
    }
    let elapsed = clock.elapsed().as_secs_f64();
    Ok((0..n)
        .map(|i| InvertResult {
            method: "es_lite".into(),
            init: k0.data()[i * p..(i + 1) * p].to_vec(),
            k_hat: best.data()[i * p..(i + 1) * p].to_vec(),
            history: history.iter().map(|h| h[i]).collect(),
            wall_time_seconds: elapsed / n as f64,
            acceptance_rate: None,
        })
        .collect())
}
