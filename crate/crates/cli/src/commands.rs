use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use ino_core::adm::{particle_simulate, train_adm as fit_adm, wasserstein1, AdmError, AdmModel};
use ino_core::baselines::{train_fm_grad, train_mlp_regressor, MlpRegressor};
use ino_core::cno::{train_cno as fit_cno, CnoModel};
use ino_core::datagen::{generate_dataset, generate_with_stats, load_dataset, save_dataset, Dataset};
use ino_core::eval::{
    benchmark_method, format_value, run_method, sample_problem, speedup, write_report, Method, Models, ReportMeta,
};
use ino_core::numerics::{SplitRng, Tensor};

use crate::config::RunConfig;
use crate::manifest::{self, file_digest};
use crate::CliError;

const TRAIN: &str = "dataset.inod";
const TEST: &str = "test.inod";
const CNO: &str = "cno.inom";
const ADM: &str = "adm.inom";
const FM_GRAD: &str = "fm_grad.inom";
const MLP: &str = "mlp.inom";

fn root(cfg: &RunConfig) -> SplitRng {
    SplitRng::new(cfg.seed)
}

fn require(cfg: &RunConfig, name: &str, producer: &str) -> Result<PathBuf, CliError> {
    let path = cfg.output_dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Missing(format!("{} not found; run `ino {producer}` first", path.display())))
    }
}

fn load_train(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(load_dataset(&require(cfg, TRAIN, "gen-data")?)?)
}

fn load_cno(cfg: &RunConfig) -> Result<CnoModel, CliError> {
    Ok(CnoModel::load(&require(cfg, CNO, "train-cno")?)?)
}

fn load_velocity(cfg: &RunConfig, file: &str, kind: &str, producer: &str) -> Result<AdmModel, CliError> {
    Ok(AdmModel::load(&require(cfg, file, producer)?, kind)?)
}

fn load_mlp(cfg: &RunConfig) -> Result<MlpRegressor, CliError> {
    Ok(MlpRegressor::load(&require(cfg, MLP, "train-mlp")?)?)
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let rng = root(cfg).named("data");
    let train = generate_dataset(&cfg.system, cfg.n_train, cfg.grid, rng.named("train"))?;
    let test = generate_with_stats(&cfg.system, cfg.n_test, cfg.grid, rng.named("test"), &train.stats)?;
    save_dataset(&train, &cfg.output_dir.join(TRAIN))?;
    save_dataset(&test, &cfg.output_dir.join(TEST))?;
    println!("wrote {} training and {} test records to {}", train.len(), test.len(), cfg.output_dir.display());
    manifest::record(cfg, "gen-data", &[], &[TRAIN.into(), TEST.into()])
}

pub fn train_cno(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_train(cfg)?;
    let (model, report) = fit_cno(&data, &cfg.cno, root(cfg).named("cno"))?;
    model.save(&cfg.output_dir.join(CNO))?;
    if let Some(last) = report.epoch_losses.last() {
        println!("cno: {} iterations, final epoch loss {last:.6}", report.iterations);
    }
    manifest::record(cfg, "train-cno", &[TRAIN], &[CNO.into()])
}

pub fn train_adm(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_train(cfg)?;
    let cno = load_cno(cfg)?;
    let (model, report) = fit_adm(&cno, &data.records, &data.x0_standardized(), &cfg.adm, root(cfg).named("adm"))?;
    if report.counters.surrogate_recordings != 0 {
        return Err(CliError::Numerical("drift training differentiated through the surrogate".into()));
    }
    model.save(&cfg.output_dir.join(ADM), "adm")?;
    if let Some(last) = report.epoch_losses.last() {
        println!("adm: {} iterations, final epoch loss {last:.6}", report.iterations);
    }
    manifest::record(cfg, "train-adm", &[TRAIN, CNO], &[ADM.into()])
}

pub fn train_fmgrad(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_train(cfg)?;
    let cno = load_cno(cfg)?;
    let (model, report) = train_fm_grad(&cno, &data.records, &data.x0_standardized(), &cfg.adm, root(cfg).named("fm_grad"))?;
    model.save(&cfg.output_dir.join(FM_GRAD), "fm_grad")?;
    if let Some(last) = report.epoch_losses.last() {
        println!("fm_grad: {} iterations, final epoch loss {last:.6}", report.iterations);
    }
    manifest::record(cfg, "train-fmgrad", &[TRAIN, CNO], &[FM_GRAD.into()])
}

pub fn train_mlp(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_train(cfg)?;
    let (model, losses) = train_mlp_regressor(&data.records, &data.x0_standardized(), &cfg.mlp, root(cfg).named("mlp"))?;
    model.save(&cfg.output_dir.join(MLP))?;
    if let Some(last) = losses.last() {
        println!("mlp: final epoch loss {last:.6}");
    }
    manifest::record(cfg, "train-mlp", &[TRAIN], &[MLP.into()])
}

/// Loads the surrogate plus whichever trained models `methods` need.
struct Loaded {
    cno: CnoModel,
    adm: Option<AdmModel>,
    fm_grad: Option<AdmModel>,
    mlp: Option<MlpRegressor>,
    inputs: Vec<&'static str>,
}

impl Loaded {
    fn new(cfg: &RunConfig, methods: &[Method]) -> Result<Self, CliError> {
        let mut out = Loaded {
            cno: load_cno(cfg)?,
            adm: None,
            fm_grad: None,
            mlp: None,
            inputs: vec![TEST, CNO],
        };
        if methods.contains(&Method::Adm) {
            out.adm = Some(load_velocity(cfg, ADM, "adm", "train-adm")?);
            out.inputs.push(ADM);
        }
        if methods.contains(&Method::FmGrad) {
            out.fm_grad = Some(load_velocity(cfg, FM_GRAD, "fm_grad", "train-fmgrad")?);
            out.inputs.push(FM_GRAD);
        }
        if methods.contains(&Method::Mlp) {
            out.mlp = Some(load_mlp(cfg)?);
            out.inputs.push(MLP);
        }
        Ok(out)
    }

    fn models(&self) -> Models<'_> {
        Models {
            surrogate: &self.cno,
            adm: self.adm.as_ref(),
            fm_grad: self.fm_grad.as_ref(),
            mlp: self.mlp.as_ref(),
        }
    }
}

fn load_test(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let mut test = load_dataset(&require(cfg, TEST, "gen-data")?)?;
    if let Some(n) = cfg.max_samples {
        test.records.truncate(n.max(1));
    }
    Ok(test)
}

pub fn invert(cfg: &RunConfig, method: &str, sample: usize) -> Result<(), CliError> {
    let method: Method = method.parse()?;
    let test = load_test(cfg)?;
    let rec = test
        .records
        .get(sample)
        .ok_or_else(|| CliError::Config(format!("sample {sample} out of range (test set has {})", test.len())))?;
    let loaded = Loaded::new(cfg, &[method])?;
    let (obs, k0) = sample_problem(&rec.traj, sample, test.param_count(), &cfg.eval)?;
    let stream = SplitRng::new(cfg.seed).named(method.tag()).child(sample as u64);
    let runs = run_method(method, &loaded.models(), &obs, &test.x0_standardized(), &k0, &cfg.eval, stream)?;

    let p = test.param_count();
    let mut csv = String::from("init,iterations,final_history,time_s");
    for q in 0..p {
        csv.push_str(&format!(",k_hat_{q}"));
    }
    csv.push('\n');
    for (i, r) in runs.iter().enumerate() {
        let time = if cfg.record_time { r.wall_time_seconds } else { 0.0 };
        csv.push_str(&format!(
            "{i},{},{},{}",
            r.history.len(),
            format_value(r.history.last().copied().unwrap_or(f64::NAN)),
            format_value(time)
        ));
        for v in &r.k_hat {
            csv.push(',');
            csv.push_str(&format_value(*v));
        }
        csv.push('\n');
    }
    let name = format!("reports/invert_{}_{sample}.csv", method.tag());
    write_file(&cfg.output_dir, &name, &csv)?;
    println!("wrote {name}");
    manifest::record(cfg, "invert", &loaded.inputs, &[name])
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let test = load_test(cfg)?;
    let loaded = Loaded::new(cfg, &cfg.methods)?;
    let mut reports = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let mut r = benchmark_method(m, &loaded.models(), &test, &cfg.eval)?;
        println!(
            "{:<8} mae {:.5}  mean {:.5}  std {:.5}  traj_mse {:.5}  time {:.4}s  failures {}",
            r.method, r.params.mae, r.params.mean_sq_error, r.params.std, r.traj.mse, r.time_s, r.failures
        );
        if !cfg.record_time {
            r.time_s = 0.0;
        }
        reports.push(r);
    }
    let mut extra = vec![
        ("cno_epochs".to_string(), cfg.cno.epochs.to_string()),
        ("adm_epochs".to_string(), cfg.adm.epochs.to_string()),
        ("integration_steps".to_string(), cfg.adm.integration_steps.to_string()),
        ("baseline_iterations".to_string(), cfg.baselines.iterations.to_string()),
        ("stiff_newton_tol".to_string(), "1e-10".to_string()),
        ("stiff_refine_tol".to_string(), "1e-8".to_string()),
        ("record_time".to_string(), cfg.record_time.to_string()),
    ];
    let find = |tag: &str| reports.iter().find(|r| r.method == tag);
    if let (Some(adm), Some(gd)) = (find("adm"), find("gd_sgd")) {
        if cfg.record_time {
            extra.push(("speedup_adm_vs_gd_sgd".into(), format_value(speedup(adm, gd))));
        }
    }
    let meta = ReportMeta {
        seed: cfg.seed,
        n_inits: cfg.eval.n_inits,
        m_obs: cfg.eval.m_obs,
        config_digest: cfg.digest.clone(),
        dataset_digest: file_digest(&cfg.output_dir.join(TEST))?,
        extra,
    };
    write_report(&reports, &cfg.output_dir.join("reports"), &meta)?;
    println!("wrote reports/results.csv");
    manifest::record(
        cfg,
        "eval",
        &loaded.inputs,
        &[
            "reports/results.csv".into(),
            "reports/per_parameter.csv".into(),
            "reports/metadata.json".into(),
        ],
    )
}

/// Ensembles driven by a random linear map `G(k) = A k`, one trajectory file
/// and one ensemble-consistency file.
pub fn particle_lab(cfg: &RunConfig) -> Result<(), CliError> {
    let ps = &cfg.particles;
    let p = cfg.system.as_system().param_count();
    let d = ps.observation_dim;
    let reference = 4 * ps.ensemble_sizes.iter().copied().max().unwrap_or(2);
    let mut traj_csv = String::from("seed,ensemble_size,step,mean_distance\n");
    let mut w1_sum = vec![0.0; ps.ensemble_sizes.len()];
    let lab = root(cfg).named("particles");
    for seed in 0..ps.seeds {
        let stream = lab.child(seed);
        let mut rng = stream.named("problem").rng();
        let a: Vec<f64> = (0..d * p).map(|_| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()).collect();
        let k_star: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
        let map = |k: &Tensor| -> Result<Tensor, AdmError> {
            let b = k.dim(0);
            let mut out = vec![0.0; b * d];
            for (row, o) in k.data().chunks(p).zip(out.chunks_mut(d)) {
                for (r, oi) in o.iter_mut().enumerate() {
                    *oi = a[r * p..(r + 1) * p].iter().zip(row).map(|(x, y)| x * y).sum();
                }
            }
            Ok(Tensor::new(&[b, d], out)?)
        };
        let run = |b: usize, label: &str| -> Result<_, CliError> {
            let mut r = stream.named(label).child(b as u64).rng();
            let init = Tensor::new(&[b, p], (0..b * p).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            Ok(particle_simulate(&map, &k_star, &init, ps.steps, ps.step_size, cfg.adm.sigma_floor)?)
        };
        let refh = run(reference, "reference")?;
        let ref_final = refh.ensembles.last().expect("initial ensemble recorded");
        for (slot, &b) in ps.ensemble_sizes.iter().enumerate() {
            let h = run(b, "ensemble")?;
            for (step, dist) in h.mean_distance.iter().enumerate() {
                traj_csv.push_str(&format!("{seed},{b},{step},{}\n", format_value(*dist)));
            }
            let last = h.ensembles.last().expect("initial ensemble recorded");
            let column = |t: &Tensor, q: usize| t.data().iter().skip(q).step_by(p).copied().collect::<Vec<_>>();
            let w1: f64 = (0..p).map(|q| wasserstein1(&column(last, q), &column(ref_final, q))).sum::<f64>() / p as f64;
            w1_sum[slot] += w1;
        }
    }
    let mut w1_csv = String::from("ensemble_size,mean_w1_to_reference\n");
    for (b, s) in ps.ensemble_sizes.iter().zip(&w1_sum) {
        w1_csv.push_str(&format!("{b},{}\n", format_value(s / ps.seeds as f64)));
    }
    write_file(&cfg.output_dir, "reports/particles.csv", &traj_csv)?;
    write_file(&cfg.output_dir, "reports/particles_consistency.csv", &w1_csv)?;
    println!("wrote reports/particles.csv and reports/particles_consistency.csv");
    manifest::record(
        cfg,
        "particle-lab",
        &[],
        &["reports/particles.csv".into(), "reports/particles_consistency.csv".into()],
    )
}
