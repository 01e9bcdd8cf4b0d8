use crate::numerics::Tensor;
use crate::ode::{OdeError, OdeSystem, TimeGrid, Trajectory};

/// Settings for the implicit solver.
///
/// Each grid interval is integrated with backward Euler at substep counts
/// `base_substeps·2^j` and the results are Richardson-extrapolated; the
/// interval is accepted once successive diagonal entries of the tableau agree
/// within `refine_tol` relative to the state's max-norm, plus `abs_tol` so a
/// state decaying towards zero can still settle. Intervals that do
/// not settle within `max_level` refinements are bisected, down to a floor
/// of `2^-floor_exponent` of the grid spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StiffOptions {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub refine_tol: f64,
    pub abs_tol: f64,
    pub max_level: usize,
    pub base_substeps: usize,
    pub floor_exponent: i32,
}

impl Default for StiffOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            newton_max_iter: 50,
            refine_tol: 1e-8,
            abs_tol: 1e-14,
            max_level: 7,
            base_substeps: 1,
            floor_exponent: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonstiffOptions {
    pub substeps: usize,
}

impl Default for NonstiffOptions {
    fn default() -> Self {
        Self { substeps: 4 }
    }
}

fn check_inputs(system: &dyn OdeSystem, params: &[f64], x0: &[f64]) -> Result<(), OdeError> {
    if params.len() != system.param_count() {
        return Err(OdeError::ParamLength {
            expected: system.param_count(),
            found: params.len(),
        });
    }
    if x0.len() != system.state_dim() {
        return Err(OdeError::Shape(format!(
            "initial state has {} entries, system has {}",
            x0.len(),
            system.state_dim()
        )));
    }
    for (index, (&value, (low, high))) in params.iter().zip(system.param_bounds()).enumerate() {
        let slack = 1e-12 * (high - low).abs();
        if !(value >= low - slack && value <= high + slack) {
            return Err(OdeError::OutOfBounds { index, value, low, high });
        }
    }
    Ok(())
}

fn assemble(columns: Vec<Vec<f64>>, grid: TimeGrid) -> Trajectory {
    let dim = columns[0].len();
    let n = columns.len();
    let mut data = vec![0.0; dim * n];
    for (step, col) in columns.iter().enumerate() {
        for (s, v) in col.iter().enumerate() {
            data[s * n + step] = *v;
        }
    }
    Trajectory {
        values: Tensor::new(&[dim, n], data).expect("extents match"),
        grid,
    }
}

/// Dispatches on the system's stiffness flag with default options.
pub fn solve(system: &dyn OdeSystem, params: &[f64], x0: &[f64], grid: TimeGrid) -> Result<Trajectory, OdeError> {
    if system.stiff() {
        solve_stiff(system, params, x0, grid, &StiffOptions::default())
    } else {
        solve_nonstiff(system, params, x0, grid, &NonstiffOptions::default())
    }
}

/// Classical fourth-order Runge–Kutta with fixed substeps per grid interval.
pub fn solve_nonstiff(
    system: &dyn OdeSystem,
    params: &[f64],
    x0: &[f64],
    grid: TimeGrid,
    opts: &NonstiffOptions,
) -> Result<Trajectory, OdeError> {
    check_inputs(system, params, x0)?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut cols = Vec::with_capacity(grid.n_steps);
    cols.push(x.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for i in 1..grid.n_steps {
        let t_start = grid.node(i - 1);
        let h = (grid.node(i) - t_start) / opts.substeps as f64;
        for s in 0..opts.substeps {
            let t = t_start + s as f64 * h;
            system.rhs(t, &x, params, &mut k1);
            for j in 0..n {
                tmp[j] = x[j] + 0.5 * h * k1[j];
            }
            system.rhs(t + 0.5 * h, &tmp, params, &mut k2);
            for j in 0..n {
                tmp[j] = x[j] + 0.5 * h * k2[j];
            }
            system.rhs(t + 0.5 * h, &tmp, params, &mut k3);
            for j in 0..n {
                tmp[j] = x[j] + h * k3[j];
            }
            system.rhs(t + h, &tmp, params, &mut k4);
            for j in 0..n {
                x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite(grid.node(i)));
        }
        cols.push(x.clone());
    }
    Ok(assemble(cols, grid))
}

/// Implicit backward Euler with Newton iterations, extrapolated over substep
/// halvings until the interval endpoint settles.
pub fn solve_stiff(
    system: &dyn OdeSystem,
    params: &[f64],
    x0: &[f64],
    grid: TimeGrid,
    opts: &StiffOptions,
) -> Result<Trajectory, OdeError> {
    check_inputs(system, params, x0)?;
    let mut y = x0.to_vec();
    let mut cols = Vec::with_capacity(grid.n_steps);
    cols.push(y.clone());
    let solver = Implicit { system, params, opts };
    for i in 1..grid.n_steps {
        let (t0, t1) = (grid.node(i - 1), grid.node(i));
        let floor = (t1 - t0) * 2f64.powi(-opts.floor_exponent);
        y = solver.advance(t0, &y, t1 - t0, floor)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite(t1));
        }
        cols.push(y.clone());
    }
    Ok(assemble(cols, grid))
}

struct Implicit<'a> {
    system: &'a dyn OdeSystem,
    params: &'a [f64],
    opts: &'a StiffOptions,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl Implicit<'_> {
    fn advance(&self, t: f64, y: &[f64], span: f64, floor: f64) -> Result<Vec<f64>, OdeError> {
        if let Some(end) = self.extrapolate(t, y, span) {
            return Ok(end);
        }
        let half = 0.5 * span;
        if half < floor {
            return Err(OdeError::NewtonFailure {
                t_start: t,
                t_end: t + span,
            });
        }
        let mid = self.advance(t, y, half, floor)?;
        self.advance(t + half, &mid, half, floor)
    }

    /// Richardson tableau over doubling substep counts. `None` when a Newton
    /// solve fails or the tableau does not settle within `max_level`.
    fn extrapolate(&self, t: f64, y: &[f64], span: f64) -> Option<Vec<f64>> {
        let mut prev_row: Vec<Vec<f64>> = Vec::new();
        for level in 0..=self.opts.max_level {
            let substeps = self.opts.base_substeps << level;
            let base = self.euler_chain(t, y, span, substeps)?;
            let mut row = vec![base];
            for k in 1..=level {
                let factor = (1u64 << k) as f64 - 1.0;
                let next: Vec<f64> = row[k - 1]
                    .iter()
                    .zip(&prev_row[k - 1])
                    .map(|(fine, coarse)| fine + (fine - coarse) / factor)
                    .collect();
                row.push(next);
            }
            if level > 0 {
                let best = &row[level];
                let err = max_norm(
                    &best
                        .iter()
                        .zip(&prev_row[level - 1])
                        .map(|(a, b)| a - b)
                        .collect::<Vec<_>>(),
                );
                if err <= self.opts.refine_tol * max_norm(best) + self.opts.abs_tol {
                    return Some(best.clone());
                }
            }
            prev_row = row;
        }
        None
    }

    fn euler_chain(&self, t: f64, y: &[f64], span: f64, substeps: usize) -> Option<Vec<f64>> {
        let h = span / substeps as f64;
        let mut state = y.to_vec();
        for s in 0..substeps {
            state = self.euler_step(t + (s + 1) as f64 * h, &state, h)?;
        }
        Some(state)
    }

    /// Solves `z = y + h·f(t_next, z)` by Newton's method with a
    /// finite-difference Jacobian.
    fn euler_step(&self, t_next: f64, y: &[f64], h: f64) -> Option<Vec<f64>> {
        let n = y.len();
        let mut z = y.to_vec();
        let mut f = vec![0.0; n];
        let mut fp = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        for _ in 0..self.opts.newton_max_iter {
            self.system.rhs(t_next, &z, self.params, &mut f);
            let mut residual: Vec<f64> = (0..n).map(|i| -(z[i] - y[i] - h * f[i])).collect();
            for j in 0..n {
                let delta = f64::EPSILON.sqrt() * z[j].abs().max(1.0);
                let orig = z[j];
                z[j] = orig + delta;
                self.system.rhs(t_next, &z, self.params, &mut fp);
                z[j] = orig;
                for i in 0..n {
                    let dfdz = (fp[i] - f[i]) / delta;
                    jac[i * n + j] = if i == j { 1.0 } else { 0.0 } - h * dfdz;
                }
            }
            if !lu_solve(&mut jac, &mut residual) {
                return None;
            }
            for i in 0..n {
                z[i] += residual[i];
            }
            if z.iter().any(|v| !v.is_finite()) {
                return None;
            }
            if max_norm(&residual) <= self.opts.newton_tol * (1.0 + max_norm(&z)) {
                return Some(z);
            }
        }
        None
    }
}

/// Gaussian elimination with partial pivoting; solution overwrites `b`.
fn lu_solve(a: &mut [f64], b: &mut [f64]) -> bool {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() < 1e-300 {
            return false;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let m = a[row * n + col] / a[col * n + col];
            if m != 0.0 {
                for k in col..n {
                    a[row * n + k] -= m * a[col * n + k];
                }
                b[row] -= m * b[col];
            }
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    true
}
