//! Execution backends. Model code is written once against [`Backend`] and
//! runs either eagerly (plain forward evaluation, no gradient state) or on a
//! recording [`Tape`](crate::numerics::Tape).

use std::sync::Arc;

use crate::numerics::{kernels, NumericsError, Tensor};

pub type Res<T> = Result<T, NumericsError>;

/// Batch statistics produced by a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub trait Backend {
    type Var: Clone;

    /// True when operations are recorded for a reverse sweep.
    const RECORDS: bool;

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor;
    fn constant(&mut self, t: Tensor) -> Self::Var;
    /// Registers a model weight. Recording backends may treat it as a
    /// trainable leaf identified by `slot`.
    fn param(&mut self, slot: usize, t: &Arc<Tensor>) -> Self::Var;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Res<Self::Var>;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Res<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Res<Self::Var>;
    fn scale(&mut self, a: &Self::Var, s: f64) -> Self::Var;
    fn relu(&mut self, a: &Self::Var) -> Self::Var;
    fn sum_all(&mut self, a: &Self::Var) -> Self::Var;
    /// Same values under a new shape of equal length.
    fn reshape(&mut self, a: &Self::Var, shape: &[usize]) -> Res<Self::Var>;

    fn linear_ch(&mut self, x: &Self::Var, w: &Self::Var, b: &Self::Var) -> Res<Self::Var>;
    fn linear(&mut self, x: &Self::Var, w: &Self::Var, b: &Self::Var) -> Res<Self::Var>;
    fn spectral_conv(&mut self, x: &Self::Var, wre: &Self::Var, wim: &Self::Var, modes: usize) -> Res<Self::Var>;
    fn batch_norm_train(&mut self, x: &Self::Var, gamma: &Self::Var, beta: &Self::Var) -> Res<(Self::Var, BatchStats)>;
    fn batch_norm_eval(
        &mut self,
        x: &Self::Var,
        gamma: &Self::Var,
        beta: &Self::Var,
        mean: &Tensor,
        var: &Tensor,
    ) -> Res<Self::Var>;
    fn film(&mut self, x: &Self::Var, alpha: &Self::Var, beta: &Self::Var) -> Res<Self::Var>;
    fn bmm(&mut self, a: &Self::Var, ta: bool, b: &Self::Var, tb: bool) -> Res<Self::Var>;
    fn softmax_last(&mut self, a: &Self::Var) -> Self::Var;
    fn time_pool(&mut self, x: &Self::Var, w: &Tensor) -> Res<Self::Var>;
    fn concat_features(&mut self, parts: &[&Self::Var]) -> Res<Self::Var>;
    fn weighted_l1(&mut self, pred: &Self::Var, target: &Tensor, weight: Option<&Tensor>, norm: f64) -> Res<Self::Var>;
}

pub(crate) fn check_same(a: &Tensor, b: &Tensor) -> Res<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(NumericsError::ShapeMismatch {
            expected: a.shape().to_vec(),
            found: b.shape().to_vec(),
        })
    }
}


/// Forward-only evaluation. Never allocates gradient state.
#[derive(Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type Var = Arc<Tensor>;
    const RECORDS: bool = false;

    fn value<'a>(&'a self, v: &'a Arc<Tensor>) -> &'a Tensor {
        v
    }
    fn constant(&mut self, t: Tensor) -> Arc<Tensor> {
        Arc::new(t)
    }
    fn param(&mut self, _slot: usize, t: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::clone(t)
    }
    fn add(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Res<Arc<Tensor>> {
        check_same(a, b)?;
        Ok(Arc::new(a.zip_map(b, |x, y| x + y)))
    }
    fn sub(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Res<Arc<Tensor>> {
        check_same(a, b)?;
        Ok(Arc::new(a.zip_map(b, |x, y| x - y)))
    }
    fn mul(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Res<Arc<Tensor>> {
        check_same(a, b)?;
        Ok(Arc::new(a.zip_map(b, |x, y| x * y)))
    }
    fn scale(&mut self, a: &Arc<Tensor>, s: f64) -> Arc<Tensor> {
        Arc::new(a.map(|x| x * s))
    }
    fn relu(&mut self, a: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(a.map(|x| x.max(0.0)))
    }
    fn sum_all(&mut self, a: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(Tensor::scalar(a.sum()))
    }
    fn reshape(&mut self, a: &Arc<Tensor>, shape: &[usize]) -> Res<Arc<Tensor>> {
        Ok(Arc::new(a.as_ref().clone().reshape(shape)?))
    }
    fn linear_ch(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: &Arc<Tensor>) -> Res<Arc<Tensor>> {
        kernels::linear_ch(x, w, b).map(Arc::new)
    }
    fn linear(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: &Arc<Tensor>) -> Res<Arc<Tensor>> {
        kernels::linear(x, w, b).map(Arc::new)
    }
    fn spectral_conv(&mut self, x: &Arc<Tensor>, wre: &Arc<Tensor>, wim: &Arc<Tensor>, modes: usize) -> Res<Arc<Tensor>> {
        kernels::spectral_conv(x, wre, wim, modes).map(|(y, _)| Arc::new(y))
    }
    fn batch_norm_train(
        &mut self,
        x: &Arc<Tensor>,
        gamma: &Arc<Tensor>,
        beta: &Arc<Tensor>,
    ) -> Res<(Arc<Tensor>, BatchStats)> {
        let out = kernels::batch_norm_train(x, gamma, beta)?;
        Ok((
            Arc::new(out.y),
            BatchStats {
                mean: out.mean,
                var: out.var,
            },
        ))
    }
    fn batch_norm_eval(
        &mut self,
        x: &Arc<Tensor>,
        gamma: &Arc<Tensor>,
        beta: &Arc<Tensor>,
        mean: &Tensor,
        var: &Tensor,
    ) -> Res<Arc<Tensor>> {
        kernels::batch_norm_eval(x, gamma, beta, mean, var).map(|(y, _)| Arc::new(y))
    }
    fn film(&mut self, x: &Arc<Tensor>, alpha: &Arc<Tensor>, beta: &Arc<Tensor>) -> Res<Arc<Tensor>> {
        kernels::film(x, alpha, beta).map(Arc::new)
    }
    fn bmm(&mut self, a: &Arc<Tensor>, ta: bool, b: &Arc<Tensor>, tb: bool) -> Res<Arc<Tensor>> {
        kernels::bmm(a, ta, b, tb).map(Arc::new)
    }
    fn softmax_last(&mut self, a: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(kernels::softmax_last(a))
    }
    fn time_pool(&mut self, x: &Arc<Tensor>, w: &Tensor) -> Res<Arc<Tensor>> {
        kernels::time_pool(x, w).map(Arc::new)
    }
    fn concat_features(&mut self, parts: &[&Arc<Tensor>]) -> Res<Arc<Tensor>> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        kernels::concat_features(&refs).map(Arc::new)
    }
    fn weighted_l1(&mut self, pred: &Arc<Tensor>, target: &Tensor, weight: Option<&Tensor>, norm: f64) -> Res<Arc<Tensor>> {
        kernels::weighted_l1(pred, target, weight, norm).map(|v| Arc::new(Tensor::scalar(v)))
    }
}
