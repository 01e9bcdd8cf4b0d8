//! Parameter sampling, trajectory datasets, normalization, sparse
//! observations and dataset persistence.

mod lhs;
mod store;

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::binio::FormatError;
use crate::numerics::{SplitRng, Tensor};
use crate::ode::{solve, OdeError, ParamPrior, SystemKind, TimeGrid};

pub use lhs::{lhs_sample, lhs_strata};
pub use store::{dataset_file_size, decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_VERSION};

/// Maximum number of resampling attempts for a record whose solve fails.
pub const MAX_RETRIES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid count: {0}")]
    Count(String),
    #[error("degenerate bounds for parameter {index}: [{low}, {high}]")]
    Bounds { index: usize, low: f64, high: f64 },
    #[error("species {0} has zero variance in the training set")]
    DegenerateSpecies(usize),
    #[error("record {index} failed after {attempts} attempts: {source}")]
    Solver {
        index: usize,
        attempts: usize,
        source: OdeError,
    },
    #[error("observation count {m} outside 1..={n_steps}")]
    ObservationCount { m: usize, n_steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Affine map from the unit cube to physical bounds.
pub fn to_physical(unit: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>, DataError> {
    check_bounds(unit.len(), bounds)?;
    Ok(unit.iter().zip(bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect())
}

pub fn to_unit(physical: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>, DataError> {
    check_bounds(physical.len(), bounds)?;
    Ok(physical.iter().zip(bounds).map(|(p, (lo, hi))| (p - lo) / (hi - lo)).collect())
}

fn check_bounds(n: usize, bounds: &[(f64, f64)]) -> Result<(), DataError> {
    if n != bounds.len() {
        return Err(DataError::Shape(format!("{n} values for {} bounds", bounds.len())));
    }
    for (index, &(low, high)) in bounds.iter().enumerate() {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(DataError::Bounds { index, low, high });
        }
    }
    Ok(())
}

/// Frozen normalization fitted on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub param_low: Vec<f64>,
    pub param_high: Vec<f64>,
    pub species_mean: Vec<f64>,
    pub species_std: Vec<f64>,
}

impl NormalizationStats {
    /// Fits per-species mean and (population) standard deviation pooled over
    /// time and records. Each trajectory is `[state_dim, n_steps]`.
    pub fn fit(bounds: &[(f64, f64)], raw: &[Tensor]) -> Result<Self, DataError> {
        check_bounds(bounds.len(), bounds)?;
        let first = raw.first().ok_or_else(|| DataError::Count("no trajectories".into()))?;
        let s = first.dim(0);
        let mut mean = vec![0.0; s];
        let mut count = 0usize;
        for tr in raw {
            if tr.shape() != first.shape() {
                return Err(DataError::Shape(format!("{:?} vs {:?}", tr.shape(), first.shape())));
            }
            for (sp, row) in tr.data().chunks(tr.dim(1)).enumerate() {
                mean[sp] += row.iter().sum::<f64>();
            }
            count += tr.dim(1);
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; s];
        for tr in raw {
            for (sp, row) in tr.data().chunks(tr.dim(1)).enumerate() {
                var[sp] += row.iter().map(|v| (v - mean[sp]).powi(2)).sum::<f64>();
            }
        }
        let mut std = Vec::with_capacity(s);
        for (sp, v) in var.iter().enumerate() {
            let sd = (v / count as f64).sqrt();
            if !(sd > 0.0) {
                return Err(DataError::DegenerateSpecies(sp));
            }
            std.push(sd);
        }
        Ok(Self {
            param_low: bounds.iter().map(|b| b.0).collect(),
            param_high: bounds.iter().map(|b| b.1).collect(),
            species_mean: mean,
            species_std: std,
        })
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.param_low.iter().copied().zip(self.param_high.iter().copied()).collect()
    }

    pub fn standardize(&self, raw: &Tensor) -> Tensor {
        self.per_species(raw, |v, m, s| (v - m) / s)
    }

    pub fn unstandardize(&self, z: &Tensor) -> Tensor {
        self.per_species(z, |v, m, s| v * s + m)
    }

    fn per_species(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let t = x.dim(x.rank() - 1);
        let s = self.species_mean.len();
        let mut out = x.clone();
        for (row_idx, row) in out.data_mut().chunks_mut(t).enumerate() {
            let sp = row_idx % s;
            let (m, sd) = (self.species_mean[sp], self.species_std[sp]);
            row.iter_mut().for_each(|v| *v = f(*v, m, sd));
        }
        out
    }
}

/// One generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub unit: Vec<f64>,
    pub physical: Vec<f64>,
    /// Standardized trajectory `[state_dim, n_steps]`, held at the 32-bit
    /// precision used on disk.
    pub traj: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub system: SystemKind,
    pub grid: TimeGrid,
    pub stats: NormalizationStats,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.system.as_system().param_count()
    }

    pub fn state_dim(&self) -> usize {
        self.system.as_system().state_dim()
    }

    /// Fixed initial condition shared by every record, standardized.
    pub fn x0_standardized(&self) -> Vec<f64> {
        let x0 = self.system.as_system().initial_state();
        x0.iter()
            .enumerate()
            .map(|(s, v)| (v - self.stats.species_mean[s]) / self.stats.species_std[s])
            .collect()
    }

    /// Mean standardized trajectory over records, `[state_dim, n_steps]`.
    pub fn mean_trajectory(&self) -> Tensor {
        let mut acc = Tensor::zeros(&[self.state_dim(), self.grid.n_steps]);
        for r in &self.records {
            acc.axpy(1.0, &r.traj);
        }
        acc.map(|v| v / self.len().max(1) as f64)
    }
}

fn quantize(t: Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

/// Maps a unit-cube LHS point to physical parameters respecting the system's
/// prior. Under a truncated normal prior the stratification is carried out
/// in probability space, and the returned unit vector is the linear
/// normalization of the physical draw.
fn place(prior: ParamPrior, u: &[f64], bounds: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    match prior {
        ParamPrior::Uniform => {
            let phys = to_physical(u, bounds)?;
            Ok((u.to_vec(), phys))
        }
        ParamPrior::TruncatedStdNormal => {
            let n = Normal::new(0.0, 1.0).expect("standard normal");
            let phys: Vec<f64> = u
                .iter()
                .zip(bounds)
                .map(|(&p, &(lo, hi))| {
                    let (a, b) = (n.cdf(lo), n.cdf(hi));
                    n.inverse_cdf(a + p * (b - a)).clamp(lo, hi)
                })
                .collect();
            let unit = to_unit(&phys, bounds)?;
            Ok((unit, phys))
        }
    }
}

/// Solves one record; a failed solve redraws the within-stratum offsets from
/// the record's own stream.
fn generate_record(
    system: &SystemKind,
    grid: TimeGrid,
    strata: &[usize],
    n: usize,
    stream: SplitRng,
    index: usize,
) -> Result<(Vec<f64>, Vec<f64>, Tensor), DataError> {
    let sys = system.as_system();
    let bounds = sys.param_bounds();
    let mut rng = stream.rng();
    let mut last = None;
    for _ in 0..=MAX_RETRIES {
        let u: Vec<f64> = strata
            .iter()
            .map(|&s| (s as f64 + rng.gen::<f64>()) / n as f64)
            .collect();
        let (unit, phys) = place(sys.prior(), &u, &bounds)?;
        match solve(sys, &phys, &sys.initial_state(), grid) {
            Ok(tr) => return Ok((unit, phys, tr.values)),
            Err(e) => last = Some(e),
        }
    }
    Err(DataError::Solver {
        index,
        attempts: MAX_RETRIES + 1,
        source: last.expect("at least one attempt"),
    })
}

/// Generates `n` raw records: LHS over parameter space, solved in parallel
/// with per-record streams. Returns `(unit, physical, raw trajectory)`.
pub fn generate_raw(
    system: &SystemKind,
    n: usize,
    grid: TimeGrid,
    rng: SplitRng,
) -> Result<Vec<(Vec<f64>, Vec<f64>, Tensor)>, DataError> {
    if n == 0 {
        return Err(DataError::Count("dataset needs at least one record".into()));
    }
    let p = system.as_system().param_count();
    let strata = lhs_strata(p, n, &mut rng.named("lhs").rng())?;
    let records = rng.named("records");
    (0..n)
        .into_par_iter()
        .map(|i| {
            let cells: Vec<usize> = strata.iter().map(|col| col[i]).collect();
            generate_record(system, grid, &cells, n, records.child(i as u64), i)
        })
        .collect()
}

/// Generates a training dataset and fits normalization on it.
pub fn generate_dataset(system: &SystemKind, n: usize, grid: TimeGrid, rng: SplitRng) -> Result<Dataset, DataError> {
    let raw = generate_raw(system, n, grid, rng)?;
    let trajs: Vec<Tensor> = raw.iter().map(|r| r.2.clone()).collect();
    let stats = NormalizationStats::fit(&system.as_system().param_bounds(), &trajs)?;
    Ok(assemble(system, grid, stats, raw))
}

/// Generates a held-out dataset standardized with frozen training stats.
pub fn generate_with_stats(
    system: &SystemKind,
    n: usize,
    grid: TimeGrid,
    rng: SplitRng,
    stats: &NormalizationStats,
) -> Result<Dataset, DataError> {
    let raw = generate_raw(system, n, grid, rng)?;
    Ok(assemble(system, grid, stats.clone(), raw))
}

fn assemble(
    system: &SystemKind,
    grid: TimeGrid,
    stats: NormalizationStats,
    raw: Vec<(Vec<f64>, Vec<f64>, Tensor)>,
) -> Dataset {
    let records = raw
        .into_iter()
        .map(|(unit, physical, tr)| Record {
            unit,
            physical,
            traj: quantize(stats.standardize(&tr)),
        })
        .collect();
    Dataset {
        system: system.clone(),
        grid,
        stats,
        records,
    }
}

/// `M` observed time nodes of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseObservation {
    pub indices: Vec<usize>,
    /// `[state_dim, M]`
    pub values: Tensor,
    pub mask: Vec<bool>,
}

impl SparseObservation {
    pub fn at_indices(traj: &Tensor, indices: &[usize]) -> Result<Self, DataError> {
        let (s, t) = (traj.dim(0), traj.dim(1));
        if indices.is_empty() || indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i >= t) {
            return Err(DataError::Shape(format!("invalid index set {indices:?} for {t} nodes")));
        }
        let m = indices.len();
        let mut values = vec![0.0; s * m];
        for sp in 0..s {
            for (j, &i) in indices.iter().enumerate() {
                values[sp * m + j] = traj.data()[sp * t + i];
            }
        }
        let mut mask = vec![false; t];
        indices.iter().for_each(|&i| mask[i] = true);
        Ok(Self {
            indices: indices.to_vec(),
            values: Tensor::new(&[s, m], values).expect("extents match"),
            mask,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.mask.len()
    }

    /// Dense `[state_dim, n_steps]` values with zeros at unobserved nodes.
    pub fn dense(&self) -> Tensor {
        let (s, m, t) = (self.values.dim(0), self.indices.len(), self.n_steps());
        let mut out = vec![0.0; s * t];
        for sp in 0..s {
            for (j, &i) in self.indices.iter().enumerate() {
                out[sp * t + i] = self.values.data()[sp * m + j];
            }
        }
        Tensor::new(&[s, t], out).expect("extents match")
    }
}

/// Draws `m` distinct nodes uniformly without replacement, sorted.
pub fn sample_indices<R: Rng + ?Sized>(n_steps: usize, m: usize, rng: &mut R) -> Result<Vec<usize>, DataError> {
    if m == 0 || m > n_steps {
        return Err(DataError::ObservationCount { m, n_steps });
    }
    let mut idx = rand::seq::index::sample(rng, n_steps, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn sample_observations<R: Rng + ?Sized>(traj: &Tensor, m: usize, rng: &mut R) -> Result<SparseObservation, DataError> {
    if traj.rank() != 2 {
        return Err(DataError::Shape(format!("trajectory must be [state, time], got {:?}", traj.shape())));
    }
    let idx = sample_indices(traj.dim(1), m, rng)?;
    SparseObservation::at_indices(traj, &idx)
}
