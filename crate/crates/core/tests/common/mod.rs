//! Test surrogates with closed-form forward maps.

#![allow(dead_code)]

use ino_core::cno::{CnoError, Surrogate};
use ino_core::datagen::Record;
use ino_core::numerics::{instrument, Backend, Eager, SplitRng, Tape, Tensor, Var};
use rand::Rng;

/// `G(k) = reshape(W k + b, [S, T])`, ignoring the encoded inputs.
#[derive(Clone, Debug)]
pub struct LinearSurrogate {
    pub w: Tensor,
    pub b: Tensor,
    pub s: usize,
    pub p: usize,
    pub t: usize,
}

impl LinearSurrogate {
    /// `G(k) = k` with one time step.
    pub fn identity(p: usize) -> Self {
        let mut w = Tensor::zeros(&[p, p]);
        for i in 0..p {
            w.data_mut()[i * p + i] = 1.0;
        }
        Self { w, b: Tensor::zeros(&[p]), s: p, p, t: 1 }
    }

    pub fn random(s: usize, p: usize, t: usize, seed: u64) -> Self {
        let mut rng = SplitRng::new(seed).named("linear-surrogate").rng();
        let n = s * t;
        let w = Tensor::new(&[n, p], (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(&[n], (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        Self { w, b, s, p, t }
    }

    fn run<B: Backend>(&self, be: &mut B, inputs: &Tensor, k: &B::Var) -> Result<B::Var, CnoError> {
        if B::RECORDS {
            instrument::note_surrogate_recording();
        }
        let n = be.value(k).dim(0);
        if inputs.dim(0) != n || inputs.dim(2) != self.t {
            return Err(CnoError::Shape(format!("inputs {:?} for {n} rows", inputs.shape())));
        }
        let w = be.constant(self.w.clone());
        let b = be.constant(self.b.clone());
        let y = be.linear(k, &w, &b)?;
        Ok(be.reshape(&y, &[n, self.s, self.t])?)
    }

    /// Records whose trajectories are exactly `G(k*)`, with `k*` uniform in
    /// the unit cube.
    pub fn records(&self, n: usize, seed: u64) -> Vec<Record> {
        let mut rng = SplitRng::new(seed).named("records").rng();
        let inputs = Tensor::zeros(&[1, 2 * self.s + 2, self.t]);
        (0..n)
            .map(|_| {
                let unit: Vec<f64> = (0..self.p).map(|_| rng.gen()).collect();
                let k = Tensor::new(&[1, self.p], unit.clone()).unwrap();
                let traj = self.predict(&inputs, &k).unwrap().reshape(&[self.s, self.t]).unwrap();
                Record { physical: unit.clone(), unit, traj }
            })
            .collect()
    }
}

impl Surrogate for LinearSurrogate {
    fn state_dim(&self) -> usize {
        self.s
    }
    fn param_count(&self) -> usize {
        self.p
    }
    fn n_steps(&self) -> usize {
        self.t
    }
    fn predict(&self, inputs: &Tensor, k: &Tensor) -> Result<Tensor, CnoError> {
        let mut be = Eager;
        let kv = be.constant(k.clone());
        let out = self.run(&mut be, inputs, &kv)?;
        Ok(out.as_ref().clone())
    }
    fn record(&self, tape: &mut Tape, inputs: &Tensor, k: Var) -> Result<Var, CnoError> {
        self.run(tape, inputs, &k)
    }
}
