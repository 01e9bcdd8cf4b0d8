use super::{compute_residuals, drift_velocity, AdmError};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleHistory {
    /// Ensemble `[B, P]` before the first step and after every step.
    pub ensembles: Vec<Tensor>,
    /// Mean Euclidean distance to `k*` for each recorded ensemble.
    pub mean_distance: Vec<f64>,
    /// Set when the mean distance exceeded ten times its initial value; the
    /// simulation stops at that point.
    pub diverged: bool,
}

fn mean_distance(k: &Tensor, k_star: &[f64]) -> f64 {
    let p = k_star.len();
    let rows = k.data().chunks(p);
    let n = rows.len();
    rows.map(|r| r.iter().zip(k_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64
}

/// Interacting particle system `k_i ← k_i + h·v_i` where every particle is
/// pulled toward a shared target `k*` with drift weights computed from
/// residuals `G(k_i) − G(k*)` of an arbitrary deterministic map `G`.
pub fn particle_simulate<F>(
    forward_map: F,
    k_star: &[f64],
    init: &Tensor,
    steps: usize,
    step_size: f64,
    sigma_floor: f64,
) -> Result<ParticleHistory, AdmError>
where
    F: Fn(&Tensor) -> Result<Tensor, AdmError>,
{
    let (b, p) = (init.dim(0), init.dim(1));
    if p != k_star.len() {
        return Err(AdmError::Shape(format!("particles have {p} coordinates, k* has {}", k_star.len())));
    }
    let target_one = forward_map(&Tensor::new(&[1, p], k_star.to_vec())?)?;
    let per = target_one.len();
    let mut target = Vec::with_capacity(b * per);
    for _ in 0..b {
        target.extend_from_slice(target_one.data());
    }
    let mut shape = target_one.shape().to_vec();
    shape[0] = b;
    let target = Tensor::new(&shape, target)?;
    let stars = Tensor::new(&[b, p], k_star.iter().cycle().take(b * p).copied().collect())?;

    let mut k = init.clone();
    let d0 = mean_distance(&k, k_star);
    let mut history = ParticleHistory {
        ensembles: vec![k.clone()],
        mean_distance: vec![d0],
        diverged: false,
    };
    for _ in 0..steps {
        let pred = forward_map(&k)?;
        let residuals = compute_residuals(&pred, &target)?;
        let v = drift_velocity(&k, &stars, &residuals, sigma_floor)?;
        k.axpy(step_size, &v);
        let d = mean_distance(&k, k_star);
        history.ensembles.push(k.clone());
        history.mean_distance.push(d);
        if !(d <= 10.0 * d0) && d0 > 0.0 {
            history.diverged = true;
            break;
        }
    }
    Ok(history)
}

/// Wasserstein-1 distance between two 1-D empirical distributions of any
/// sizes: the integral of `|F_a − F_b|`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
    }
    total
}

/// Per-coordinate W1 between two ensembles `[B, P]` and `[B', P]`.
pub fn ensemble_consistency(a: &Tensor, b: &Tensor) -> Result<Vec<f64>, AdmError> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) {
        return Err(AdmError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let p = a.dim(1);
    let column = |t: &Tensor, q: usize| -> Vec<f64> { t.data().iter().skip(q).step_by(p).copied().collect() };
    Ok((0..p).map(|q| wasserstein1(&column(a, q), &column(b, q))).collect())
}
