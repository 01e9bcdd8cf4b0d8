use ino_core::datagen::generate_raw;
use ino_core::numerics::SplitRng;
use ino_core::ode::{
    pack_params, solve, solve_nonstiff, solve_stiff, unpack_params, Grn, GrnSpec, LinearDecay, NonstiffOptions,
    OdeError, OdeSystem, StiffDemo, StiffOptions, SystemKind, TimeGrid, Trajectory,
};
use proptest::prelude::*;
use rand::Rng;

/// Largest node difference relative to the species' own max-norm over the
/// trajectory. Pointwise relative error is meaningless at zero crossings.
fn max_rel_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    let t = a.n_steps();
    let mut worst = 0.0f64;
    for (ra, rb) in a.values.data().chunks(t).zip(b.values.data().chunks(t)) {
        let scale = ra.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    worst
}

#[test]
fn grid_nodes_strictly_increasing() {
    let g = TimeGrid::new(0.0, 5.0, 100).unwrap();
    let nodes = g.nodes();
    assert_eq!(nodes.len(), 100);
    assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(nodes[0], 0.0);
    assert_eq!(nodes[99], 5.0);
    assert!(TimeGrid::new(1.0, 1.0, 10).is_err());
    assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
}

#[test]
fn grn_zero_coupling_is_pure_decay() {
    let spec = GrnSpec {
        c: vec![0.0; 3],
        gamma: vec![0.5, 1.0, 2.0],
        x0: vec![1.0, -0.5, 2.0],
        ..GrnSpec::new(3)
    };
    let sys = Grn::new(spec.clone());
    let grid = TimeGrid::new(0.0, 5.0, 100).unwrap();
    let tr = solve_nonstiff(&sys, &[0.0; 7], &spec.x0, grid, &NonstiffOptions::default()).unwrap();
    for i in 0..100 {
        let t = grid.node(i);
        for s in 0..3 {
            let want = spec.x0[s] * (-spec.gamma[s] * t).exp();
            assert!((tr.at(s, i) - want).abs() < 1e-8);
        }
    }
}

#[test]
fn forty_parameters_at_fourteen_genes() {
    let sys = Grn::with_genes(14);
    assert_eq!(sys.param_count(), 40);
    assert_eq!(pack_params(&vec![1.0; 196], 14).unwrap().len(), 40);
    let spec = GrnSpec::new(14);
    assert!(spec.c.iter().chain(&spec.gamma).all(|&v| v > 0.0));
}

#[test]
fn stiff_self_convergence() {
    // Halving every substep (doubling the base count) and tightening the
    // refinement tolerance must not move the nodes.
    let sys = StiffDemo::default();
    let grid = TimeGrid::new(0.0, 40.0, 100).unwrap();
    let x0 = sys.initial_state();
    let coarse = solve_stiff(&sys, &StiffDemo::STANDARD_RATES, &x0, grid, &StiffOptions::default()).unwrap();
    let fine_opts = StiffOptions {
        base_substeps: 2,
        floor_exponent: 21,
        ..StiffOptions::default()
    };
    let fine = solve_stiff(&sys, &StiffDemo::STANDARD_RATES, &x0, grid, &fine_opts).unwrap();
    let d = max_rel_diff(&coarse, &fine);
    assert!(d < 1e-6, "stiff self-convergence {d:e}");
}

#[test]
fn rk4_self_convergence() {
    let sys = Grn::with_genes(5);
    let mut rng = SplitRng::new(11).rng();
    let p: Vec<f64> = (0..13).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let grid = TimeGrid::new(0.0, 5.0, 100).unwrap();
    let x0 = sys.initial_state();
    let a = solve_nonstiff(&sys, &p, &x0, grid, &NonstiffOptions { substeps: 4 }).unwrap();
    let b = solve_nonstiff(&sys, &p, &x0, grid, &NonstiffOptions { substeps: 8 }).unwrap();
    let d = max_rel_diff(&a, &b);
    assert!(d < 1e-7, "rk4 self-convergence {d:e}");
}

#[test]
fn solvers_agree_on_grn() {
    let sys = Grn::with_genes(5);
    let grid = TimeGrid::new(0.0, 5.0, 100).unwrap();
    let x0 = sys.initial_state();
    for seed in 0..3 {
        let mut rng = SplitRng::new(40 + seed).rng();
        let p: Vec<f64> = (0..13).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = solve_nonstiff(&sys, &p, &x0, grid, &NonstiffOptions::default()).unwrap();
        let b = solve_stiff(&sys, &p, &x0, grid, &StiffOptions::default()).unwrap();
        let d = max_rel_diff(&a, &b);
        assert!(d < 1e-5, "seed {seed}: {d:e}");
    }
}

#[test]
fn stiff_decay_at_large_rate_is_stable() {
    let sys = LinearDecay { dim: 1, x0: vec![1.0] };
    let grid = TimeGrid::new(0.0, 1.0, 11).unwrap();
    let tr = solve_stiff(&sys, &[1e4], &[1.0], grid, &StiffOptions::default()).unwrap();
    assert!(tr.values.data()[1..].iter().all(|v| v.abs() < 1e-8));
}

/// Right-hand side that turns non-finite after `t = 0.5`, so no substep can
/// satisfy the implicit equation past that point.
struct Poisoned;

impl OdeSystem for Poisoned {
    fn name(&self) -> &str {
        "poisoned"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn param_count(&self) -> usize {
        0
    }
    fn param_bounds(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
    fn rhs(&self, t: f64, x: &[f64], _: &[f64], dx: &mut [f64]) {
        dx[0] = if t > 0.5 { f64::NAN } else { -x[0] };
    }
    fn stiff(&self) -> bool {
        true
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![1.0]
    }
}

#[test]
fn newton_failure_names_interval() {
    let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
    let opts = StiffOptions {
        floor_exponent: 6,
        ..StiffOptions::default()
    };
    match solve_stiff(&Poisoned, &[], &[1.0], grid, &opts) {
        Err(OdeError::NewtonFailure { t_start, t_end }) => {
            assert!(t_start >= 0.5 && t_end <= 1.0 && t_start < t_end, "[{t_start}, {t_end}]");
            assert!(t_end - t_start <= 0.5 * 2f64.powi(-5));
        }
        other => panic!("expected NewtonFailure, got {other:?}"),
    }
}

#[test]
fn nonstiff_reports_non_finite_state() {
    let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
    let err = solve_nonstiff(&Poisoned, &[], &[1.0], grid, &NonstiffOptions::default()).unwrap_err();
    assert!(matches!(err, OdeError::NonFinite(_)));
}

#[test]
fn wrong_lengths_are_rejected() {
    let sys = Grn::with_genes(3);
    let grid = TimeGrid::new(0.0, 1.0, 5).unwrap();
    assert!(matches!(
        solve(&sys, &[0.0; 6], &sys.initial_state(), grid),
        Err(OdeError::ParamLength { expected: 7, found: 6 })
    ));
    assert!(matches!(solve(&sys, &[0.0; 7], &[0.5; 2], grid), Err(OdeError::Shape(_))));
    assert!(matches!(SystemKind::from_name("pollu", 5), Err(OdeError::UnknownSystem(_))));
}

#[test]
fn grn_draws_from_the_sampler_stay_finite() {
    let sys = SystemKind::from_name("grn", 5).unwrap();
    let grid = TimeGrid::new(0.0, 5.0, 100).unwrap();
    let raw = generate_raw(&sys, 200, grid, SplitRng::new(5)).unwrap();
    assert_eq!(raw.len(), 200);
    for (_, phys, tr) in &raw {
        assert!(phys.iter().all(|v| v.abs() <= 3.0));
        assert!(tr.data().iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_unpack_bijection(n in 2usize..16, seed in any::<u64>()) {
        let mut rng = SplitRng::new(seed).rng();
        let v: Vec<f64> = (0..3 * n - 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let k = unpack_params(&v, n).unwrap();
        prop_assert_eq!(pack_params(&k, n).unwrap(), v);
        let mask = GrnSpec::new(n).band_mask();
        prop_assert_eq!(mask.iter().filter(|&&b| b).count(), 3 * n - 2);
        for (val, m) in k.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*val, 0.0);
            }
        }
    }

    #[test]
    fn stiffdemo_conserves_mass(u in prop::array::uniform3(0.0f64..1.0)) {
        let sys = StiffDemo::default();
        let rates: Vec<f64> = sys.bounds.iter().zip(u).map(|(&(lo, hi), t)| lo + t * (hi - lo)).collect();
        let grid = TimeGrid::new(0.0, 40.0, 40).unwrap();
        let tr = solve(&sys, &rates, &sys.initial_state(), grid).unwrap();
        for i in 0..40 {
            let mass: f64 = tr.state(i).iter().sum();
            prop_assert!((mass - 1.0).abs() < 1e-8, "node {}: {}", i, mass);
        }
    }

    #[test]
    fn linear_decay_matches_exponential(rate in 0.0f64..1.0, x0 in -1.0f64..1.0) {
        let sys = LinearDecay { dim: 1, x0: vec![x0] };
        let grid = TimeGrid::new(0.0, 1.0, 11).unwrap();
        let a = solve_nonstiff(&sys, &[rate], &[x0], grid, &NonstiffOptions::default()).unwrap();
        let b = solve_stiff(&sys, &[rate], &[x0], grid, &StiffOptions::default()).unwrap();
        for i in 0..11 {
            let want = x0 * (-rate * grid.node(i)).exp();
            prop_assert!((a.at(0, i) - want).abs() < 1e-8);
            prop_assert!((b.at(0, i) - want).abs() < 1e-6);
        }
    }
}
