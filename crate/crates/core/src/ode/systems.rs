use crate::ode::OdeError;

/// How a system's physical parameters are distributed when sampling data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamPrior {
    /// Uniform on the bounds.
    Uniform,
    /// Standard normal truncated to the bounds.
    TruncatedStdNormal,
}

/// An autonomous or time-dependent ODE `dx/dt = f(t, x; params)`.
pub trait OdeSystem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    /// Physical-unit `(low, high)` per parameter.
    fn param_bounds(&self) -> Vec<(f64, f64)>;
    fn rhs(&self, t: f64, x: &[f64], params: &[f64], dx: &mut [f64]);
    fn stiff(&self) -> bool;
    fn initial_state(&self) -> Vec<f64>;
    fn prior(&self) -> ParamPrior {
        ParamPrior::Uniform
    }
}

/// Elementwise regulation function of the GRN.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `c + K·g(x) − Γ⊙x` with `K` dense row-major `n×n`.
pub fn grn_rhs(x: &[f64], k: &[f64], c: &[f64], gamma: &[f64]) -> Result<Vec<f64>, OdeError> {
    let n = x.len();
    if k.len() != n * n || c.len() != n || gamma.len() != n {
        return Err(OdeError::Shape(format!(
            "state {n}, K {}, c {}, Γ {}",
            k.len(),
            c.len(),
            gamma.len()
        )));
    }
    let g: Vec<f64> = x.iter().map(|&v| logistic(v)).collect();
    Ok((0..n)
        .map(|i| {
            let kg: f64 = k[i * n..(i + 1) * n].iter().zip(&g).map(|(a, b)| a * b).sum();
            c[i] + kg - gamma[i] * x[i]
        })
        .collect())
}

/// Banded positions `(row, col)` in packing order: row-major, and within row
/// `i` the columns `i−1, i, i+1` that exist.
pub fn band_positions(n: usize) -> Vec<(usize, usize)> {
    let mut pos = Vec::with_capacity(3 * n - 2);
    for i in 0..n {
        for j in i.saturating_sub(1)..=(i + 1).min(n - 1) {
            pos.push((i, j));
        }
    }
    pos
}

/// Flattens the activated band of a dense `n×n` matrix.
pub fn pack_params(k: &[f64], n: usize) -> Result<Vec<f64>, OdeError> {
    if k.len() != n * n {
        return Err(OdeError::Shape(format!("K has {} entries, expected {}", k.len(), n * n)));
    }
    Ok(band_positions(n).into_iter().map(|(i, j)| k[i * n + j]).collect())
}

/// Inverse of [`pack_params`]; off-band entries are zero.
pub fn unpack_params(v: &[f64], n: usize) -> Result<Vec<f64>, OdeError> {
    let pos = band_positions(n);
    if v.len() != pos.len() {
        return Err(OdeError::ParamLength {
            expected: pos.len(),
            found: v.len(),
        });
    }
    let mut k = vec![0.0; n * n];
    for ((i, j), &val) in pos.into_iter().zip(v) {
        k[i * n + j] = val;
    }
    Ok(k)
}

/// Fixed (non-inferred) GRN configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct GrnSpec {
    pub n_genes: usize,
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub x0: Vec<f64>,
    pub param_low: f64,
    pub param_high: f64,
}

impl GrnSpec {
    pub fn new(n_genes: usize) -> Self {
        Self {
            n_genes,
            c: vec![0.5; n_genes],
            gamma: vec![1.0; n_genes],
            x0: vec![0.5; n_genes],
            param_low: -3.0,
            param_high: 3.0,
        }
    }

    /// `band_mask[i·n + j]` is true for activated interaction entries.
    pub fn band_mask(&self) -> Vec<bool> {
        let n = self.n_genes;
        let mut m = vec![false; n * n];
        for (i, j) in band_positions(n) {
            m[i * n + j] = true;
        }
        m
    }
}

/// Gene regulatory network `dx/dt = c + K g(x) − Γx` with banded `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grn {
    pub spec: GrnSpec,
    name: String,
}

impl Grn {
    pub fn new(spec: GrnSpec) -> Self {
        let name = format!("grn{}", spec.n_genes);
        Self { spec, name }
    }

    pub fn with_genes(n_genes: usize) -> Self {
        Self::new(GrnSpec::new(n_genes))
    }
}

impl OdeSystem for Grn {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.spec.n_genes
    }
    fn param_count(&self) -> usize {
        3 * self.spec.n_genes - 2
    }
    fn param_bounds(&self) -> Vec<(f64, f64)> {
        vec![(self.spec.param_low, self.spec.param_high); self.param_count()]
    }
    fn rhs(&self, _t: f64, x: &[f64], params: &[f64], dx: &mut [f64]) {
        // banded product without materializing K
        let n = self.spec.n_genes;
        let g: Vec<f64> = x.iter().map(|&v| logistic(v)).collect();
        let mut p = 0;
        for i in 0..n {
            let mut kg = 0.0;
            for gj in &g[i.saturating_sub(1)..=(i + 1).min(n - 1)] {
                kg += params[p] * gj;
                p += 1;
            }
            dx[i] = self.spec.c[i] + kg - self.spec.gamma[i] * x[i];
        }
    }
    fn stiff(&self) -> bool {
        false
    }
    fn initial_state(&self) -> Vec<f64> {
        self.spec.x0.clone()
    }
    fn prior(&self) -> ParamPrior {
        ParamPrior::TruncatedStdNormal
    }
}

/// Robertson-type three-species stiff kinetics with rate constants
/// `(k1, k2, k3)` as unknowns, starting from `(1, 0, 0)`.
///
/// This is a small stand-in for large atmospheric-chemistry networks; it
/// exercises stiffness in the solver and the surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct StiffDemo {
    pub bounds: [(f64, f64); 3],
}

impl Default for StiffDemo {
    fn default() -> Self {
        Self {
            bounds: [(0.02, 0.08), (1.0e7, 5.0e7), (5.0e3, 2.0e4)],
        }
    }
}

impl StiffDemo {
    pub const STANDARD_RATES: [f64; 3] = [0.04, 3.0e7, 1.0e4];
}

impl OdeSystem for StiffDemo {
    fn name(&self) -> &str {
        "stiffdemo"
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn param_count(&self) -> usize {
        3
    }
    fn param_bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.to_vec()
    }
    fn rhs(&self, _t: f64, y: &[f64], k: &[f64], dy: &mut [f64]) {
        let r1 = k[0] * y[0];
        let r2 = k[1] * y[1] * y[1];
        let r3 = k[2] * y[1] * y[2];
        dy[0] = -r1 + r3;
        dy[1] = r1 - r2 - r3;
        dy[2] = r2;
    }
    fn stiff(&self) -> bool {
        true
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![1.0, 0.0, 0.0]
    }
}

/// `dx/dt = −rate·x` per component; used for analytic solver checks.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDecay {
    pub dim: usize,
    pub x0: Vec<f64>,
}

impl OdeSystem for LinearDecay {
    fn name(&self) -> &str {
        "linear-decay"
    }
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn param_count(&self) -> usize {
        self.dim
    }
    fn param_bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0e6); self.dim]
    }
    fn rhs(&self, _t: f64, x: &[f64], rate: &[f64], dx: &mut [f64]) {
        for i in 0..self.dim {
            dx[i] = -rate[i] * x[i];
        }
    }
    fn stiff(&self) -> bool {
        false
    }
    fn initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }
}

/// Registered benchmark systems addressable from configs and files.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemKind {
    Grn(Grn),
    StiffDemo(StiffDemo),
}

impl SystemKind {
    pub fn from_name(name: &str, n_genes: usize) -> Result<Self, OdeError> {
        match name {
            "grn" => Ok(Self::Grn(Grn::with_genes(n_genes))),
            "stiffdemo" => Ok(Self::StiffDemo(StiffDemo::default())),
            other => Err(OdeError::UnknownSystem(other.to_string())),
        }
    }

    /// Identifier stored in dataset files.
    pub fn id(&self) -> u8 {
        match self {
            Self::Grn(_) => 1,
            Self::StiffDemo(_) => 2,
        }
    }

    pub fn from_id(id: u8, state_dim: usize) -> Result<Self, OdeError> {
        match id {
            1 => Ok(Self::Grn(Grn::with_genes(state_dim))),
            2 => Ok(Self::StiffDemo(StiffDemo::default())),
            other => Err(OdeError::UnknownSystem(format!("id {other}"))),
        }
    }

    pub fn as_system(&self) -> &dyn OdeSystem {
        match self {
            Self::Grn(g) => g,
            Self::StiffDemo(s) => s,
        }
    }
}
