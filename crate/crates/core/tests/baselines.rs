mod common;

use common::LinearSurrogate;
use ino_core::adm::{surrogate_gradient_target, train_adm, AdmConfig, AdmModel, ObsBatch};
use ino_core::baselines::{
    es_invert, fm_grad_invert, gd_invert, mcmc_invert, mlp_predict, partial_losses, sgld_invert, train_fm_grad,
    train_mlp_regressor, BaselineConfig, BaselineError, MlpConfig, PartialLoss,
};
use ino_core::cno::{encode_inputs, train_cno, CnoConfig, CnoModel};
use ino_core::datagen::{generate_dataset, Record, SparseObservation};
use ino_core::numerics::{instrument, OptimizerKind, SplitRng, Tensor};
use ino_core::ode::{SystemKind, TimeGrid};
use rand::Rng;
use rand_distr::StandardNormal;

const STAR: [f64; 3] = [0.2, 0.5, 0.9];

/// Identity map observed at its single time step: the partial loss is a
/// plain distance to `STAR`.
fn identity_problem() -> (LinearSurrogate, SparseObservation) {
    let g = LinearSurrogate::identity(3);
    let obs = SparseObservation::at_indices(&Tensor::new(&[3, 1], STAR.to_vec()).unwrap(), &[0]).unwrap();
    (g, obs)
}

fn inits(n: usize, p: usize, seed: u64) -> Tensor {
    let mut rng = SplitRng::new(seed).rng();
    Tensor::new(&[n, p], (0..n * p).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn flat_surrogate(p: usize) -> LinearSurrogate {
    LinearSurrogate {
        w: Tensor::zeros(&[p, p]),
        b: Tensor::zeros(&[p]),
        s: p,
        p,
        t: 1,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn defaults_and_validation() {
    let cfg = BaselineConfig::default();
    assert_eq!(cfg.iterations, 100);
    assert!(cfg.validate().is_ok());
    let bad = BaselineConfig {
        iterations: 0,
        ..cfg.clone()
    };
    assert!(matches!(bad.validate(), Err(BaselineError::Config(_))));
    let bad = BaselineConfig {
        es_parents: 9,
        ..cfg.clone()
    };
    assert!(bad.validate().is_err());
    let bad = BaselineConfig {
        sgld_temperature: -1.0,
        ..cfg.clone()
    };
    assert!(bad.validate().is_err());
    assert_eq!(cfg.with_optimizer(OptimizerKind::Adam).learning_rate(), cfg.adam_learning_rate);
}

#[test]
fn init_shape_is_checked() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig::default();
    assert!(gd_invert(&g, &obs, &[0.0; 3], &inits(2, 4, 0), &cfg).is_err());
    assert!(es_invert(&g, &obs, &[0.0; 3], &Tensor::zeros(&[0, 3]), &cfg, SplitRng::new(0)).is_err());
}

// ---------------------------------------------------------------------------
// Gradient descent.

#[test]
fn zero_step_gradient_descent_stands_still() {
    let (g, obs) = identity_problem();
    let k0 = inits(4, 3, 1);
    for opt in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let cfg = BaselineConfig {
            sgd_learning_rate: 0.0,
            adam_learning_rate: 0.0,
            iterations: 15,
            ..BaselineConfig::default()
        }
        .with_optimizer(opt);
        for r in gd_invert(&g, &obs, &[0.0; 3], &k0, &cfg).unwrap() {
            assert_eq!(r.k_hat, r.init);
            assert_eq!(r.history.len(), 15);
            assert!(r.history.iter().all(|&l| l == r.history[0]));
        }
    }
}

#[test]
fn half_squared_descent_contracts_at_one_minus_lambda() {
    let (g, obs) = identity_problem();
    let k0 = inits(3, 3, 2);
    let lambda = 0.3;
    let n = 12;
    let cfg = BaselineConfig {
        iterations: n,
        sgd_learning_rate: lambda,
        loss: PartialLoss::HalfSquared,
        ..BaselineConfig::default()
    };
    let factor = (1.0 - lambda).powi(n as i32);
    for r in gd_invert(&g, &obs, &[0.0; 3], &k0, &cfg).unwrap() {
        assert_eq!(r.method, "gd_sgd");
        for q in 0..3 {
            let want = STAR[q] + factor * (r.init[q] - STAR[q]);
            assert!((r.k_hat[q] - want).abs() < 1e-12, "{} vs {want}", r.k_hat[q]);
        }
        // history holds the loss before each update: ½(1−λ)^{2i}‖k0 − k*‖²
        let d0 = dist(&r.init, &STAR).powi(2);
        for (i, l) in r.history.iter().enumerate() {
            assert!((l - 0.5 * (1.0 - lambda).powi(2 * i as i32) * d0).abs() < 1e-12);
        }
    }
}

#[test]
fn l1_descent_takes_sign_steps() {
    let (g, obs) = identity_problem();
    let k0 = Tensor::new(&[1, 3], vec![1.2, -0.5, 2.9]).unwrap();
    let cfg = BaselineConfig {
        iterations: 1,
        sgd_learning_rate: 0.1,
        ..BaselineConfig::default()
    };
    let r = &gd_invert(&g, &obs, &[0.0; 3], &k0, &cfg).unwrap()[0];
    let want = [1.1, -0.4, 2.8];
    for (a, b) in r.k_hat.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((r.history[0] - (1.0 + 1.0 + 2.0)).abs() < 1e-12);
}

#[test]
fn adam_descent_reaches_the_target() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig {
        iterations: 300,
        adam_learning_rate: 0.02,
        ..BaselineConfig::default()
    }
    .with_optimizer(OptimizerKind::Adam);
    for r in gd_invert(&g, &obs, &[0.0; 3], &inits(4, 3, 3), &cfg).unwrap() {
        assert_eq!(r.method, "gd_adam");
        assert!(dist(&r.k_hat, &STAR) < 0.1, "{:?}", r.k_hat);
    }
}

#[test]
fn gradient_methods_leave_surrogate_weights_untouched() {
    let model = CnoModel::new(
        CnoConfig {
            latent_dim: 8,
            n_modes: 4,
            n_blocks: 1,
            ..CnoConfig::default()
        },
        2,
        3,
        10,
        SplitRng::new(4),
    )
    .unwrap();
    let before = model.clone();
    let traj = Tensor::new(&[2, 10], (0..20).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
    let obs = SparseObservation::at_indices(&traj, &[1, 5, 8]).unwrap();
    let cfg = BaselineConfig {
        iterations: 5,
        ..BaselineConfig::default()
    };
    let k0 = inits(2, 3, 5);
    gd_invert(&model, &obs, &[0.1, -0.1], &k0, &cfg).unwrap();
    gd_invert(&model, &obs, &[0.1, -0.1], &k0, &cfg.with_optimizer(OptimizerKind::Adam)).unwrap();
    sgld_invert(&model, &obs, &[0.1, -0.1], &k0, &cfg, SplitRng::new(6)).unwrap();
    assert_eq!(model, before);
}

// ---------------------------------------------------------------------------
// Langevin dynamics.

#[test]
fn zero_step_langevin_stands_still() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig {
        sgld_learning_rate: 0.0,
        iterations: 20,
        ..BaselineConfig::default()
    };
    for r in sgld_invert(&g, &obs, &[0.0; 3], &inits(3, 3, 7), &cfg, SplitRng::new(8)).unwrap() {
        assert_eq!(r.k_hat, r.init);
        assert_eq!(r.method, "sgld");
    }
}

#[test]
fn langevin_noise_has_the_stated_scale() {
    // with a constant map the gradient vanishes and each step is pure noise
    let g = flat_surrogate(4);
    let obs = SparseObservation::at_indices(&Tensor::zeros(&[4, 1]), &[0]).unwrap();
    let lambda = 0.02;
    let cfg = BaselineConfig {
        sgld_learning_rate: lambda,
        iterations: 1,
        ..BaselineConfig::default()
    };
    let k0 = Tensor::zeros(&[2500, 4]);
    let out = sgld_invert(&g, &obs, &[0.0; 4], &k0, &cfg, SplitRng::new(9)).unwrap();
    let steps: Vec<f64> = out.iter().flat_map(|r| r.k_hat.clone()).collect();
    assert_eq!(steps.len(), 10_000);
    let mean = steps.iter().sum::<f64>() / steps.len() as f64;
    let sd = (steps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / steps.len() as f64).sqrt();
    let want = (2.0 * lambda).sqrt();
    assert!((sd / want - 1.0).abs() < 0.02, "sd {sd} vs {want}");
}

#[test]
fn langevin_is_reproducible() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig {
        iterations: 10,
        ..BaselineConfig::default()
    };
    let k0 = inits(3, 3, 10);
    let a = sgld_invert(&g, &obs, &[0.0; 3], &k0, &cfg, SplitRng::new(11)).unwrap();
    let b = sgld_invert(&g, &obs, &[0.0; 3], &k0, &cfg, SplitRng::new(11)).unwrap();
    assert_eq!(
        a.iter().map(|r| r.k_hat.clone()).collect::<Vec<_>>(),
        b.iter().map(|r| r.k_hat.clone()).collect::<Vec<_>>()
    );
}

// ---------------------------------------------------------------------------
// Metropolis and evolution strategy.

#[test]
fn frozen_chain_stays_put() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig {
        mcmc_temperature: 0.0,
        mcmc_proposal_scale: 0.0,
        iterations: 25,
        ..BaselineConfig::default()
    };
    for r in mcmc_invert(&g, &obs, &[0.0; 3], &inits(3, 3, 12), &cfg, SplitRng::new(13)).unwrap() {
        assert_eq!(r.k_hat, r.init);
        assert!(r.history.iter().all(|&l| l == r.history[0]));
    }
}

#[test]
fn flat_surface_accepts_everything() {
    let g = flat_surrogate(3);
    let obs = SparseObservation::at_indices(&Tensor::zeros(&[3, 1]), &[0]).unwrap();
    let cfg = BaselineConfig {
        iterations: 50,
        ..BaselineConfig::default()
    };
    for r in mcmc_invert(&g, &obs, &[0.0; 3], &inits(4, 3, 14), &cfg, SplitRng::new(15)).unwrap() {
        assert_eq!(r.acceptance_rate, Some(1.0));
    }
}

#[test]
fn metropolis_best_never_worse_than_start() {
    let (g, obs) = identity_problem();
    let k0 = inits(6, 3, 16);
    let cfg = BaselineConfig::default();
    let inputs = encode_inputs(&vec![obs.clone(); 1], &[0.0; 3]).unwrap();
    let ob = ObsBatch::repeat(&obs, 1).unwrap();
    for r in mcmc_invert(&g, &obs, &[0.0; 3], &k0, &cfg, SplitRng::new(17)).unwrap() {
        let loss = |k: &[f64]| {
            partial_losses(&g, &inputs, &ob, &Tensor::new(&[1, 3], k.to_vec()).unwrap(), PartialLoss::L1).unwrap()[0]
        };
        assert!(loss(&r.k_hat) <= loss(&r.init));
        assert_eq!(r.history.len(), 100);
        let rate = r.acceptance_rate.unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}

#[test]
fn degenerate_strategy_keeps_its_mean() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig {
        es_population: 1,
        es_parents: 1,
        es_sigma: 0.0,
        iterations: 10,
        ..BaselineConfig::default()
    };
    for r in es_invert(&g, &obs, &[0.0; 3], &inits(3, 3, 18), &cfg, SplitRng::new(19)).unwrap() {
        assert_eq!(r.k_hat, r.init);
    }
}

#[test]
fn strategy_best_so_far_is_monotone() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig::default();
    for r in es_invert(&g, &obs, &[0.0; 3], &inits(5, 3, 20), &cfg, SplitRng::new(21)).unwrap() {
        assert_eq!(r.method, "es_lite");
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.history[99] < r.history[0]);
        assert!(dist(&r.k_hat, &STAR) < dist(&r.init, &STAR));
    }
}

#[test]
fn gradient_free_methods_build_no_tapes() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig::default();
    let k0 = inits(3, 3, 22);
    let start = instrument::snapshot();
    mcmc_invert(&g, &obs, &[0.0; 3], &k0, &cfg, SplitRng::new(23)).unwrap();
    es_invert(&g, &obs, &[0.0; 3], &k0, &cfg, SplitRng::new(24)).unwrap();
    let d = instrument::snapshot().since(start);
    assert_eq!((d.tapes, d.nodes, d.grad_buffers, d.surrogate_recordings), (0, 0, 0, 0));
}

#[test]
fn search_methods_are_reproducible() {
    let (g, obs) = identity_problem();
    let cfg = BaselineConfig::default();
    let k0 = inits(3, 3, 25);
    let key = |v: Vec<ino_core::baselines::InvertResult>| v.into_iter().map(|r| (r.k_hat, r.history)).collect::<Vec<_>>();
    let run_mcmc = || key(mcmc_invert(&g, &obs, &[0.0; 3], &k0, &cfg, SplitRng::new(26)).unwrap());
    let run_es = || key(es_invert(&g, &obs, &[0.0; 3], &k0, &cfg, SplitRng::new(26)).unwrap());
    assert_eq!(run_mcmc(), run_mcmc());
    assert_eq!(run_es(), run_es());
}

// ---------------------------------------------------------------------------
// Gradient-supervised ablation.

#[test]
fn identity_gradient_target_is_negative_sign() {
    let (g, obs) = identity_problem();
    let k = Tensor::new(&[2, 3], vec![1.0, 0.0, 0.5, -1.0, 0.7, 2.0]).unwrap();
    let inputs = encode_inputs(&vec![obs.clone(); 2], &[0.0; 3]).unwrap();
    let v = surrogate_gradient_target(&g, &inputs, &k, &ObsBatch::repeat(&obs, 2).unwrap()).unwrap();
    assert_eq!(v.data(), &[-1.0, 1.0, 1.0, 1.0, -1.0, -1.0]);
}

fn stub_records(g: &LinearSurrogate) -> Vec<Record> {
    g.records(32, 27)
}

#[test]
fn ablation_shares_the_drifting_architecture() {
    let g = LinearSurrogate::random(2, 3, 8, 28);
    let records = stub_records(&g);
    let cfg = AdmConfig {
        epochs: 2,
        hidden: 16,
        n_blocks: 2,
        batch_size: 8,
        ..AdmConfig::default()
    };
    let (fm, report) = train_fm_grad(&g, &records, &[0.0, 0.0], &cfg, SplitRng::new(29)).unwrap();
    let (adm, _) = train_adm(&g, &records, &[0.0, 0.0], &cfg, SplitRng::new(29)).unwrap();
    let fresh = AdmModel::new(cfg.clone(), 2, 3, 8, SplitRng::new(0)).unwrap();
    let shapes = |m: &AdmModel| m.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
    assert_eq!(shapes(&fm), shapes(&adm));
    assert_eq!(shapes(&fm), shapes(&fresh));
    assert_eq!(report.iterations, 8);

    let obs = SparseObservation::at_indices(&records[0].traj, &[0, 3, 7]).unwrap();
    let out = fm_grad_invert(&fm, &g, &obs, &[0.0, 0.0], &inits(2, 3, 30), 20).unwrap();
    assert!(out.iter().all(|r| r.method == "fm_grad" && r.history.len() == 20));
}

#[test]
fn ablation_loss_drops_against_a_grn_surrogate() {
    let sys = SystemKind::from_name("grn", 5).unwrap();
    let data = generate_dataset(&sys, 512, TimeGrid::new(0.0, 5.0, 100).unwrap(), SplitRng::new(31)).unwrap();
    let cno_cfg = CnoConfig {
        latent_dim: 8,
        n_modes: 8,
        n_blocks: 1,
        epochs: 2,
        batch_size: 32,
        ..CnoConfig::default()
    };
    let (cno, _) = train_cno(&data, &cno_cfg, SplitRng::new(32)).unwrap();
    let cfg = AdmConfig {
        epochs: 10,
        hidden: 32,
        n_blocks: 2,
        learning_rate: 1e-3,
        ..AdmConfig::default()
    };
    let (_, report) = train_fm_grad(&cno, &data.records, &data.x0_standardized(), &cfg, SplitRng::new(33)).unwrap();
    let l = &report.epoch_losses;
    assert!(l[9] < l[0], "epoch losses {l:?}");
}

// ---------------------------------------------------------------------------
// Direct regression.

#[test]
fn regression_learns_a_constant_target() {
    let mut rng = SplitRng::new(34).rng();
    let target = vec![0.3, 0.8, 0.1, 0.6];
    let records: Vec<Record> = (0..64)
        .map(|_| Record {
            unit: target.clone(),
            physical: target.clone(),
            traj: Tensor::new(&[2, 12], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        })
        .collect();
    let cfg = MlpConfig {
        hidden: 16,
        epochs: 60,
        batch_size: 16,
        ..MlpConfig::default()
    };
    let (model, losses) = train_mlp_regressor(&records, &[0.0, 0.0], &cfg, SplitRng::new(35)).unwrap();
    assert_eq!(losses.len(), 60);
    let obs: Vec<SparseObservation> = records[..5]
        .iter()
        .map(|r| SparseObservation::at_indices(&r.traj, &[2, 6, 9]).unwrap())
        .collect();
    let pred = mlp_predict(&model, &obs, &[0.0, 0.0]).unwrap();
    assert_eq!(pred.shape(), &[5, 4]);
    for row in pred.data().chunks(4) {
        assert!(dist(row, &target) < 0.05, "{row:?}");
    }
    let (again, _) = train_mlp_regressor(&records, &[0.0, 0.0], &cfg, SplitRng::new(35)).unwrap();
    assert_eq!(again, model);
}

#[test]
fn regression_checkpoint_roundtrip() {
    let mut rng = SplitRng::new(36).rng();
    let records: Vec<Record> = (0..8)
        .map(|_| {
            let unit: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            Record {
                physical: unit.clone(),
                unit,
                traj: Tensor::new(&[2, 6], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            }
        })
        .collect();
    let cfg = MlpConfig {
        hidden: 8,
        epochs: 2,
        batch_size: 4,
        ..MlpConfig::default()
    };
    let (model, _) = train_mlp_regressor(&records, &[0.0, 0.0], &cfg, SplitRng::new(37)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mlp.inom");
    model.save(&path).unwrap();
    assert_eq!(ino_core::baselines::MlpRegressor::load(&path).unwrap(), model);
    let bad = SparseObservation::at_indices(&Tensor::zeros(&[3, 6]), &[0]).unwrap();
    assert!(mlp_predict(&model, &[bad], &[0.0, 0.0]).is_err());
}
