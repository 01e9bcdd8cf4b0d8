use crate::numerics::{NumericsError, Tensor};

/// Squared median of the pairwise Euclidean distances between `vectors`.
/// Even pair counts take the lower median.
pub fn median_sq_pairwise(vectors: &[Tensor]) -> Result<f64, NumericsError> {
    let b = vectors.len();
    if b < 2 {
        return Err(NumericsError::TooFewVectors(b));
    }
    let mut sq = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in i + 1..b {
            sq.push(sq_dist(vectors[i].data(), vectors[j].data()));
        }
    }
    Ok(lower_median(&mut sq))
}

/// Lower median, sorting in place. Ordering of squared distances equals
/// ordering of distances, so the result is the squared median distance.
pub(crate) fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
