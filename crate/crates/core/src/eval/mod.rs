//! Metrics, the benchmark driver and report files.

mod report;

use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::adm::{adm_invert, AdmModel, InvertResult};
use crate::baselines::{
    es_invert, fm_grad_invert, gd_invert, mcmc_invert, sgld_invert, BaselineConfig, BaselineError, MlpRegressor,
};
use crate::cno::{encode_inputs, CnoError, Surrogate};
use crate::datagen::{sample_observations, Dataset, SparseObservation};
use crate::numerics::{OptimizerKind, SplitRng, Tensor};

pub use report::{format_value, write_report, ReportMeta, CSV_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("method `{0}` needs a trained model that was not supplied")]
    MissingModel(&'static str),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Surrogate(#[from] CnoError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Adm,
    GdSgd,
    GdAdam,
    FmGrad,
    Mlp,
    EsLite,
    Sgld,
    Mcmc,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Adm,
        Method::GdSgd,
        Method::GdAdam,
        Method::FmGrad,
        Method::Mlp,
        Method::EsLite,
        Method::Sgld,
        Method::Mcmc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Adm => "adm",
            Method::GdSgd => "gd_sgd",
            Method::GdAdam => "gd_adam",
            Method::FmGrad => "fm_grad",
            Method::Mlp => "mlp",
            Method::EsLite => "es_lite",
            Method::Sgld => "sgld",
            Method::Mcmc => "mcmc",
        }
    }

    /// Whether the method ignores the initialization and returns one answer.
    pub fn single_shot(self) -> bool {
        self == Method::Mlp
    }
}

impl FromStr for Method {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| EvalError::UnknownMethod(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParamMetrics {
    /// Mean over (sample, init, coordinate) of the squared error.
    pub mean_sq_error: f64,
    /// Population std across inits, averaged over samples and coordinates.
    pub std: f64,
    pub mae: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrajMetrics {
    pub mse: f64,
    pub mae: f64,
}

/// Parameter recovery metrics in unit space. `recovered[s][i]` is the
/// estimate of sample `s` from initialization `i`.
pub fn param_metrics(recovered: &[Vec<Vec<f64>>], truths: &[Vec<f64>]) -> Result<ParamMetrics, EvalError> {
    if recovered.is_empty() || recovered.len() != truths.len() {
        return Err(EvalError::Empty);
    }
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    let (mut std_sum, mut std_n) = (0.0, 0usize);
    for (runs, truth) in recovered.iter().zip(truths) {
        if runs.is_empty() {
            return Err(EvalError::Empty);
        }
        for run in runs {
            if run.len() != truth.len() {
                return Err(EvalError::Shape(format!("estimate of {} for {} parameters", run.len(), truth.len())));
            }
            for (a, b) in run.iter().zip(truth) {
                sq += (a - b) * (a - b);
                abs += (a - b).abs();
                n += 1;
            }
        }
        for q in 0..truth.len() {
            std_sum += population_std(runs.iter().map(|r| r[q]));
            std_n += 1;
        }
    }
    Ok(ParamMetrics {
        mean_sq_error: sq / n as f64,
        std: std_sum / std_n.max(1) as f64,
        mae: abs / n as f64,
    })
}

/// Population std, computed on offsets from the first value so that
/// identical values give exactly zero.
fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return 0.0 };
    let n = values.clone().count() as f64;
    let mean = values.clone().map(|v| v - first).sum::<f64>() / n;
    (values.map(|v| (v - first - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Surrogate trajectories at each row of `k_hat: [n, P]` against the full
/// ground truth `[S, T]`, averaged over rows.
pub fn traj_metrics<S: Surrogate + ?Sized>(
    surrogate: &S,
    k_hat: &Tensor,
    truth: &Tensor,
    x0: &[f64],
    obs: &SparseObservation,
) -> Result<TrajMetrics, EvalError> {
    let n = k_hat.dim(0);
    if truth.shape() != [surrogate.state_dim(), surrogate.n_steps()] {
        return Err(EvalError::Shape(format!("truth {:?}", truth.shape())));
    }
    let inputs = encode_inputs(&vec![obs.clone(); n], x0)?;
    let pred = surrogate.predict(&inputs, k_hat)?;
    let per = truth.len();
    let (mut sq, mut abs) = (0.0, 0.0);
    for row in pred.data().chunks(per) {
        for (a, b) in row.iter().zip(truth.data()) {
            sq += (a - b) * (a - b);
            abs += (a - b).abs();
        }
    }
    let count = (n * per) as f64;
    Ok(TrajMetrics {
        mse: sq / count,
        mae: abs / count,
    })
}

/// Trained models available to the benchmark. Methods whose model is absent
/// fail with [`EvalError::MissingModel`].
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub surrogate: &'a dyn Surrogate,
    pub adm: Option<&'a AdmModel>,
    pub fm_grad: Option<&'a AdmModel>,
    pub mlp: Option<&'a MlpRegressor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub n_inits: usize,
    pub m_obs: usize,
    pub integration_steps: usize,
    pub baselines: BaselineConfig,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_inits: 10,
            m_obs: 3,
            integration_steps: 20,
            baselines: BaselineConfig::default(),
            seed: 0,
        }
    }
}

/// Recovery summary of one parameter coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParamSummary {
    /// Mean signed error in unit space.
    pub mean_error: f64,
    /// Across-init population std, averaged over samples.
    pub std: f64,
    pub mae: f64,
    /// MAE in physical units.
    pub mae_physical: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub dataset: String,
    pub params: ParamMetrics,
    pub traj: TrajMetrics,
    /// Mean wall time of one (sample, initialization) run.
    pub time_s: f64,
    pub n_samples: usize,
    pub n_inits: usize,
    pub failures: usize,
    pub per_param: Vec<ParamSummary>,
}

/// Observation set and initializations shared by every method on sample
/// `j`, so all methods see identical information.
pub fn sample_problem(traj: &Tensor, j: usize, p: usize, settings: &EvalSettings) -> Result<(SparseObservation, Tensor), EvalError> {
    let root = SplitRng::new(settings.seed);
    let mut obs_rng = root.named("observations").child(j as u64).rng();
    let obs = sample_observations(traj, settings.m_obs, &mut obs_rng).map_err(BaselineError::from)?;
    let mut init_rng = root.named("inits").child(j as u64).rng();
    let k0 = (0..settings.n_inits * p).map(|_| init_rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((obs, Tensor::new(&[settings.n_inits, p], k0).expect("extents match")))
}

/// Runs one method on one observation set.
pub fn run_method(
    method: Method,
    models: &Models,
    obs: &SparseObservation,
    x0: &[f64],
    k0: &Tensor,
    settings: &EvalSettings,
    rng: SplitRng,
) -> Result<Vec<InvertResult>, EvalError> {
    let cno = models.surrogate;
    let cfg = &settings.baselines;
    let steps = settings.integration_steps;
    Ok(match method {
        Method::Adm => {
            let adm = models.adm.ok_or(EvalError::MissingModel("adm"))?;
            adm_invert(adm, cno, obs, x0, k0, steps).map_err(BaselineError::from)?
        }
        Method::FmGrad => {
            let m = models.fm_grad.ok_or(EvalError::MissingModel("fm_grad"))?;
            fm_grad_invert(m, cno, obs, x0, k0, steps)?
        }
        Method::GdSgd => gd_invert(cno, obs, x0, k0, &cfg.with_optimizer(OptimizerKind::Sgd))?,
        Method::GdAdam => gd_invert(cno, obs, x0, k0, &cfg.with_optimizer(OptimizerKind::Adam))?,
        Method::Sgld => sgld_invert(cno, obs, x0, k0, cfg, rng)?,
        Method::Mcmc => mcmc_invert(cno, obs, x0, k0, cfg, rng)?,
        Method::EsLite => es_invert(cno, obs, x0, k0, cfg, rng)?,
        Method::Mlp => {
            let m = models.mlp.ok_or(EvalError::MissingModel("mlp"))?;
            let clock = std::time::Instant::now();
            let k = m.predict(std::slice::from_ref(obs), x0)?;
            vec![InvertResult {
                method: "mlp".into(),
                init: Vec::new(),
                k_hat: k.into_data(),
                history: Vec::new(),
                wall_time_seconds: clock.elapsed().as_secs_f64(),
                acceptance_rate: None,
            }]
        }
    })
}

struct SampleOutcome {
    runs: Vec<InvertResult>,
    traj: TrajMetrics,
}

/// Runs `method` on every test sample from `n_inits` standard-normal
/// initializations and aggregates the metrics. Samples are processed in
/// parallel; each has its own random streams, so results do not depend on
/// the worker count. A failed sample is excluded and counted.
pub fn benchmark_method(method: Method, models: &Models, test: &Dataset, settings: &EvalSettings) -> Result<MethodReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let p = test.param_count();
    let x0 = test.x0_standardized();
    let stream = SplitRng::new(settings.seed).named(method.tag());
    let outcomes: Vec<Result<SampleOutcome, EvalError>> = test
        .records
        .par_iter()
        .enumerate()
        .map(|(j, rec)| {
            let (obs, k0) = sample_problem(&rec.traj, j, p, settings)?;
            let runs = run_method(method, models, &obs, &x0, &k0, settings, stream.child(j as u64))?;
            let rows: Vec<f64> = runs.iter().flat_map(|r| r.k_hat.iter().copied()).collect();
            let k_hat = Tensor::new(&[runs.len(), p], rows).map_err(|e| EvalError::Shape(e.to_string()))?;
            if !k_hat.is_finite() {
                return Err(EvalError::Shape("non-finite estimate".into()));
            }
            let traj = traj_metrics(models.surrogate, &k_hat, &rec.traj, &x0, &obs)?;
            if !(traj.mse.is_finite() && traj.mae.is_finite()) {
                return Err(EvalError::Shape("non-finite trajectory metrics".into()));
            }
            Ok(SampleOutcome { runs, traj })
        })
        .collect();

    // a missing model is a caller error, not a per-sample failure
    if let Some(Err(EvalError::MissingModel(m))) = outcomes.iter().find(|o| matches!(o, Err(EvalError::MissingModel(_)))) {
        return Err(EvalError::MissingModel(m));
    }
    let mut recovered = Vec::new();
    let mut truths = Vec::new();
    let (mut traj_mse, mut traj_mae, mut time, mut runs_n) = (0.0, 0.0, 0.0, 0usize);
    let mut failures = 0;
    for (rec, outcome) in test.records.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                traj_mse += o.traj.mse;
                traj_mae += o.traj.mae;
                time += o.runs.iter().map(|r| r.wall_time_seconds).sum::<f64>();
                runs_n += o.runs.len();
                recovered.push(o.runs.into_iter().map(|r| r.k_hat).collect::<Vec<_>>());
                truths.push(rec.unit.clone());
            }
            Err(_) => failures += 1,
        }
    }
    if recovered.is_empty() {
        return Ok(MethodReport {
            method: method.tag().into(),
            dataset: test.system.as_system().name().to_string(),
            params: ParamMetrics {
                mean_sq_error: f64::NAN,
                std: f64::NAN,
                mae: f64::NAN,
            },
            traj: TrajMetrics {
                mse: f64::NAN,
                mae: f64::NAN,
            },
            time_s: f64::NAN,
            n_samples: 0,
            n_inits: settings.n_inits,
            failures,
            per_param: Vec::new(),
        });
    }
    let bounds = test.stats.bounds();
    let ok = recovered.len() as f64;
    Ok(MethodReport {
        method: method.tag().into(),
        dataset: test.system.as_system().name().to_string(),
        params: param_metrics(&recovered, &truths)?,
        traj: TrajMetrics {
            mse: traj_mse / ok,
            mae: traj_mae / ok,
        },
        time_s: time / runs_n as f64,
        n_samples: recovered.len(),
        n_inits: if method.single_shot() { 1 } else { settings.n_inits },
        failures,
        per_param: per_param_summary(&recovered, &truths, &bounds),
    })
}

fn per_param_summary(recovered: &[Vec<Vec<f64>>], truths: &[Vec<f64>], bounds: &[(f64, f64)]) -> Vec<ParamSummary> {
    let p = truths[0].len();
    (0..p)
        .map(|q| {
            let (mut err, mut abs, mut n, mut std) = (0.0, 0.0, 0usize, 0.0);
            for (runs, truth) in recovered.iter().zip(truths) {
                for r in runs {
                    err += r[q] - truth[q];
                    abs += (r[q] - truth[q]).abs();
                    n += 1;
                }
                std += population_std(runs.iter().map(|r| r[q]));
            }
            let width = bounds.get(q).map_or(1.0, |(lo, hi)| hi - lo);
            ParamSummary {
                mean_error: err / n as f64,
                std: std / recovered.len() as f64,
                mae: abs / n as f64,
                mae_physical: abs / n as f64 * width,
            }
        })
        .collect()
}

/// Wall-time ratio `slow / fast` between two reports.
pub fn speedup(fast: &MethodReport, slow: &MethodReport) -> f64 {
    slow.time_s / fast.time_s
}
