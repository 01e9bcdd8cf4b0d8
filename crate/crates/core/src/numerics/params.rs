use std::sync::Arc;

use crate::numerics::{NumericsError, OptimizerState, Tensor};

/// Ordered, named collection of model weights. Slot indices are stable and
/// are the identifiers handed to [`Backend::param`](crate::numerics::Backend::param).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Arc<Tensor> {
        &self.values[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.values[slot])
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| v.as_ref()))
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Applies an optimizer update; missing gradients count as zero.
    pub fn apply(&mut self, opt: &mut OptimizerState, grads: &[Option<Tensor>]) -> Result<(), NumericsError> {
        let zeros: Vec<Tensor> = self
            .values
            .iter()
            .zip(grads.iter().chain(std::iter::repeat(&None)))
            .map(|(v, g)| if g.is_none() { Tensor::zeros(v.shape()) } else { Tensor::scalar(0.0) })
            .collect();
        let grad_refs: Vec<&Tensor> = grads
            .iter()
            .chain(std::iter::repeat(&None))
            .zip(&zeros)
            .take(self.values.len())
            .map(|(g, z)| g.as_ref().unwrap_or(z))
            .collect();
        let mut leaves: Vec<&mut Tensor> = self.values.iter_mut().map(Arc::make_mut).collect();
        opt.step(&mut leaves, &grad_refs)
    }
}
