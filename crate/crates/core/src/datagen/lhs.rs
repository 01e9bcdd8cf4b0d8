use rand::seq::SliceRandom;
use rand::Rng;

use super::DataError;

/// Per-dimension stratum assignment: `strata[d][i]` is the stratum of sample
/// `i` along dimension `d`, each a permutation of `0..n`.
pub fn lhs_strata<R: Rng + ?Sized>(p: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<usize>>, DataError> {
    if p == 0 || n == 0 {
        return Err(DataError::Count(format!("LHS needs P >= 1 and N >= 1, got P={p}, N={n}")));
    }
    Ok((0..p)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            perm
        })
        .collect())
}

/// Latin hypercube sample of `n` points in `[0, 1)^p`.
pub fn lhs_sample<R: Rng + ?Sized>(p: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, DataError> {
    let strata = lhs_strata(p, n, rng)?;
    let mut points = vec![vec![0.0; p]; n];
    for (d, col) in strata.iter().enumerate() {
        for (i, &s) in col.iter().enumerate() {
            let v = (s as f64 + rng.gen::<f64>()) / n as f64;
            // guard against rounding up to the next stratum boundary
            points[i][d] = v.min(just_below((s + 1) as f64 / n as f64));
        }
    }
    Ok(points)
}

fn just_below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}
