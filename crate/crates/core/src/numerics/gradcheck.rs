//! Central finite-difference gradient checking against the tape.

use crate::numerics::{NumericsError, Tape, Tensor, Var};

/// Outcome of a gradient check on one input.
#[derive(Clone, Debug)]
pub struct LeafCheck {
    pub index: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, or the
    /// absolute difference when both norms fall below `1e-10`.
    pub rel_err: f64,
}

/// Compares tape gradients of `f` with central differences of step `h`.
///
/// `f` builds a scalar loss from leaf handles, one per entry of `inputs`.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<LeafCheck>, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |xs: &[Tensor]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(crate::numerics::Backend::value(&tape, &out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = Vec::with_capacity(inputs.len());
    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *var);
        let mut numeric = Vec::with_capacity(inputs[idx].len());
        let mut probe = inputs.to_vec();
        for j in 0..inputs[idx].len() {
            let orig = inputs[idx].data()[j];
            probe[idx].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[idx].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[idx].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = analytic.norm2();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel_err = if scale < 1e-10 { diff } else { diff / scale };
        report.push(LeafCheck { index: idx, rel_err });
    }
    Ok(report)
}

/// Largest relative error over all inputs.
pub fn worst(checks: &[LeafCheck]) -> f64 {
    checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
}
