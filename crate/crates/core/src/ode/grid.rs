use crate::numerics::Tensor;
use crate::ode::OdeError;

/// Uniform time grid whose first node is `t0` and last node is `t_end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self, OdeError> {
        if n_steps < 2 {
            return Err(OdeError::Grid(format!("need at least 2 nodes, got {n_steps}")));
        }
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(OdeError::Grid(format!("require t0 < t_end, got [{t0}, {t_end}]")));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / (self.n_steps - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_steps).map(|i| self.node(i)).collect()
    }

    /// Node times rescaled to `[0, 1]` relative to the horizon.
    pub fn normalized_nodes(&self) -> Vec<f64> {
        self.nodes().iter().map(|t| (t - self.t0) / (self.t_end - self.t0)).collect()
    }
}

/// Species-by-time grid of state values.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `[state_dim, n_steps]`
    pub values: Tensor,
    pub grid: TimeGrid,
}

impl Trajectory {
    pub fn state_dim(&self) -> usize {
        self.values.dim(0)
    }

    pub fn n_steps(&self) -> usize {
        self.values.dim(1)
    }

    pub fn at(&self, species: usize, step: usize) -> f64 {
        self.values.data()[species * self.n_steps() + step]
    }

    /// State vector at one node.
    pub fn state(&self, step: usize) -> Vec<f64> {
        (0..self.state_dim()).map(|s| self.at(s, step)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_strictly_increasing() {
        let g = TimeGrid::new(0.0, 5.0, 100).unwrap();
        let n = g.nodes();
        assert_eq!(n.len(), 100);
        assert_eq!(n[0], 0.0);
        assert_eq!(n[99], 5.0);
        assert!(n.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 10).is_err());
        assert!(TimeGrid::new(0.0, f64::NAN, 10).is_err());
    }
}
