//! Run configuration: a sectioned `key = value` file in TOML syntax.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use ino_core::adm::AdmConfig;
use ino_core::baselines::{BaselineConfig, MlpConfig, PartialLoss};
use ino_core::cno::CnoConfig;
use ino_core::eval::{EvalSettings, Method};
use ino_core::numerics::OptimizerKind;
use ino_core::ode::{Grn, GrnSpec, SystemKind, TimeGrid};

use crate::CliError;

/// Allowed keys per section; the flag marks required keys.
const SCHEMA: &[(&str, &[(&str, bool)])] = &[
    (
        "system",
        &[
            ("name", true),
            ("n_genes", false),
            ("t0", false),
            ("t_end", false),
            ("n_steps", false),
            ("param_low", false),
            ("param_high", false),
        ],
    ),
    ("data", &[("n_train", true), ("n_test", true), ("seed", true)]),
    (
        "cno",
        &[
            ("latent_dim", false),
            ("n_modes", false),
            ("n_blocks", false),
            ("m_train", false),
            ("epochs", false),
            ("learning_rate", false),
            ("batch_size", false),
            ("attention", false),
            ("fixed_observations", false),
        ],
    ),
    (
        "adm",
        &[
            ("sigma_floor", false),
            ("tau_samples", false),
            ("integration_steps", false),
            ("epochs", false),
            ("learning_rate", false),
            ("batch_size", false),
            ("m_obs", false),
            ("hidden", false),
            ("n_blocks", false),
        ],
    ),
    (
        "baselines",
        &[
            ("iterations", false),
            ("optimizer", false),
            ("sgd_learning_rate", false),
            ("adam_learning_rate", false),
            ("loss", false),
            ("sgld_learning_rate", false),
            ("sgld_temperature", false),
            ("mcmc_temperature", false),
            ("mcmc_proposal_scale", false),
            ("es_population", false),
            ("es_parents", false),
            ("es_sigma", false),
            ("es_adapt", false),
            ("mlp_hidden", false),
            ("mlp_depth", false),
            ("mlp_epochs", false),
            ("mlp_learning_rate", false),
            ("mlp_batch_size", false),
        ],
    ),
    (
        "eval",
        &[
            ("n_inits", false),
            ("m_obs", false),
            ("methods", false),
            ("max_samples", false),
            ("record_time", false),
        ],
    ),
    (
        "particles",
        &[
            ("ensemble_sizes", false),
            ("steps", false),
            ("step_size", false),
            ("observation_dim", false),
            ("seeds", false),
        ],
    ),
    ("io", &[("output_dir", false)]),
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    data: RawData,
    #[serde(default)]
    cno: RawCno,
    #[serde(default)]
    adm: RawAdm,
    #[serde(default)]
    baselines: RawBaselines,
    #[serde(default)]
    eval: RawEval,
    #[serde(default)]
    particles: RawParticles,
    #[serde(default)]
    io: RawIo,
}

#[derive(Deserialize)]
struct RawSystem {
    name: String,
    n_genes: Option<usize>,
    t0: Option<f64>,
    t_end: Option<f64>,
    n_steps: Option<usize>,
    param_low: Option<f64>,
    param_high: Option<f64>,
}

#[derive(Deserialize)]
struct RawData {
    n_train: usize,
    n_test: usize,
    seed: u64,
}

#[derive(Deserialize, Default)]
struct RawCno {
    latent_dim: Option<usize>,
    n_modes: Option<usize>,
    n_blocks: Option<usize>,
    m_train: Option<usize>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    attention: Option<bool>,
    fixed_observations: Option<bool>,
}

#[derive(Deserialize, Default)]
struct RawAdm {
    sigma_floor: Option<f64>,
    tau_samples: Option<usize>,
    integration_steps: Option<usize>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    m_obs: Option<usize>,
    hidden: Option<usize>,
    n_blocks: Option<usize>,
}

#[derive(Deserialize, Default)]
struct RawBaselines {
    iterations: Option<usize>,
    optimizer: Option<String>,
    sgd_learning_rate: Option<f64>,
    adam_learning_rate: Option<f64>,
    loss: Option<String>,
    sgld_learning_rate: Option<f64>,
    sgld_temperature: Option<f64>,
    mcmc_temperature: Option<f64>,
    mcmc_proposal_scale: Option<f64>,
    es_population: Option<usize>,
    es_parents: Option<usize>,
    es_sigma: Option<f64>,
    es_adapt: Option<f64>,
    mlp_hidden: Option<usize>,
    mlp_depth: Option<usize>,
    mlp_epochs: Option<usize>,
    mlp_learning_rate: Option<f64>,
    mlp_batch_size: Option<usize>,
}

#[derive(Deserialize, Default)]
struct RawEval {
    n_inits: Option<usize>,
    m_obs: Option<usize>,
    methods: Option<Vec<String>>,
    max_samples: Option<usize>,
    record_time: Option<bool>,
}

#[derive(Deserialize, Default)]
struct RawParticles {
    ensemble_sizes: Option<Vec<usize>>,
    steps: Option<usize>,
    step_size: Option<f64>,
    observation_dim: Option<usize>,
    seeds: Option<u64>,
}

#[derive(Deserialize, Default)]
struct RawIo {
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSettings {
    pub ensemble_sizes: Vec<usize>,
    pub steps: usize,
    pub step_size: f64,
    pub observation_dim: usize,
    pub seeds: u64,
}

/// Fully resolved configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub system: SystemKind,
    pub grid: TimeGrid,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub cno: CnoConfig,
    pub adm: AdmConfig,
    pub baselines: BaselineConfig,
    pub mlp: MlpConfig,
    pub eval: EvalSettings,
    pub methods: Vec<Method>,
    pub max_samples: Option<usize>,
    pub record_time: bool,
    pub particles: ParticleSettings,
    pub output_dir: PathBuf,
    /// SHA-256 of the config text and the effective seed.
    pub digest: String,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_schema(table: &toml::Table) -> Result<(), CliError> {
    for (section, value) in table {
        let keys = SCHEMA
            .iter()
            .find(|(s, _)| s == section)
            .map(|(_, k)| *k)
            .ok_or_else(|| config_err(format!("unknown section [{section}]")))?;
        let inner = value
            .as_table()
            .ok_or_else(|| config_err(format!("[{section}] must be a section, not a value")))?;
        for key in inner.keys() {
            if !keys.iter().any(|(k, _)| k == key) {
                return Err(config_err(format!("unknown key [{section}].{key}")));
            }
        }
    }
    for (section, keys) in SCHEMA {
        for (key, required) in keys.iter() {
            if !required {
                continue;
            }
            let present = table.get(*section).and_then(|s| s.as_table()).is_some_and(|s| s.contains_key(*key));
            if !present {
                return Err(config_err(format!("missing key [{section}].{key}")));
            }
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, seed, out)
    }

    pub fn parse(text: &str, seed_override: Option<u64>, out: Option<&Path>) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        check_schema(&table)?;
        let raw: RawConfig = table.try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;

        let n_genes = raw.system.n_genes.unwrap_or(5);
        let system = match raw.system.name.as_str() {
            "grn" => {
                let mut spec = GrnSpec::new(n_genes);
                if let Some(lo) = raw.system.param_low {
                    spec.param_low = lo;
                }
                if let Some(hi) = raw.system.param_high {
                    spec.param_high = hi;
                }
                if !(spec.param_low < spec.param_high) {
                    return Err(config_err("[system] param_low must be below param_high"));
                }
                SystemKind::Grn(Grn::new(spec))
            }
            other => {
                if raw.system.param_low.is_some() || raw.system.param_high.is_some() {
                    return Err(config_err("[system] bounds can only be set for grn"));
                }
                SystemKind::from_name(other, n_genes).map_err(|e| config_err(e.to_string()))?
            }
        };
        if n_genes == 0 {
            return Err(config_err("[system].n_genes must be positive"));
        }
        let grid = TimeGrid::new(
            raw.system.t0.unwrap_or(0.0),
            raw.system.t_end.unwrap_or(5.0),
            raw.system.n_steps.unwrap_or(100),
        )
        .map_err(|e| config_err(e.to_string()))?;
        if raw.data.n_train == 0 || raw.data.n_test == 0 {
            return Err(config_err("[data] n_train and n_test must be positive"));
        }
        let seed = seed_override.unwrap_or(raw.data.seed);

        let d = CnoConfig::default();
        let c = raw.cno;
        let cno = CnoConfig {
            latent_dim: c.latent_dim.unwrap_or(d.latent_dim),
            n_modes: c.n_modes.unwrap_or(d.n_modes),
            n_blocks: c.n_blocks.unwrap_or(d.n_blocks),
            m_train: c.m_train.unwrap_or(d.m_train),
            epochs: c.epochs.unwrap_or(d.epochs),
            learning_rate: c.learning_rate.unwrap_or(d.learning_rate),
            batch_size: c.batch_size.unwrap_or(d.batch_size),
            attention: c.attention.unwrap_or(d.attention),
            fixed_observations: c.fixed_observations.unwrap_or(d.fixed_observations),
        };
        cno.validate(grid.n_steps).map_err(|e| config_err(format!("[cno] {e}")))?;

        let d = AdmConfig::default();
        let a = raw.adm;
        let adm = AdmConfig {
            sigma_floor: a.sigma_floor.unwrap_or(d.sigma_floor),
            tau_samples: a.tau_samples.unwrap_or(d.tau_samples),
            integration_steps: a.integration_steps.unwrap_or(d.integration_steps),
            epochs: a.epochs.unwrap_or(d.epochs),
            learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
            batch_size: a.batch_size.unwrap_or(d.batch_size),
            m_obs: a.m_obs.unwrap_or(d.m_obs),
            hidden: a.hidden.unwrap_or(d.hidden),
            n_blocks: a.n_blocks.unwrap_or(d.n_blocks),
        };
        adm.validate().map_err(|e| config_err(format!("[adm] {e}")))?;

        let d = BaselineConfig::default();
        let b = raw.baselines;
        let optimizer = match b.optimizer.as_deref() {
            None => d.optimizer,
            Some(s) => s.parse::<OptimizerKind>().map_err(|e| config_err(format!("[baselines].optimizer: {e}")))?,
        };
        let loss = match b.loss.as_deref() {
            None | Some("l1") => PartialLoss::L1,
            Some("half_squared") => PartialLoss::HalfSquared,
            Some(other) => return Err(config_err(format!("[baselines].loss: unknown loss `{other}` (expected l1 or half_squared)"))),
        };
        let baselines = BaselineConfig {
            iterations: b.iterations.unwrap_or(d.iterations),
            optimizer,
            sgd_learning_rate: b.sgd_learning_rate.unwrap_or(d.sgd_learning_rate),
            adam_learning_rate: b.adam_learning_rate.unwrap_or(d.adam_learning_rate),
            loss,
            sgld_learning_rate: b.sgld_learning_rate.unwrap_or(d.sgld_learning_rate),
            sgld_temperature: b.sgld_temperature.unwrap_or(d.sgld_temperature),
            mcmc_temperature: b.mcmc_temperature.unwrap_or(d.mcmc_temperature),
            mcmc_proposal_scale: b.mcmc_proposal_scale.unwrap_or(d.mcmc_proposal_scale),
            es_population: b.es_population.unwrap_or(d.es_population),
            es_parents: b.es_parents.unwrap_or(d.es_parents),
            es_sigma: b.es_sigma.unwrap_or(d.es_sigma),
            es_adapt: b.es_adapt.unwrap_or(d.es_adapt),
        };
        baselines.validate().map_err(|e| config_err(format!("[baselines] {e}")))?;
        let dm = MlpConfig::default();
        let mlp = MlpConfig {
            hidden: b.mlp_hidden.unwrap_or(dm.hidden),
            depth: b.mlp_depth.unwrap_or(dm.depth),
            epochs: b.mlp_epochs.unwrap_or(dm.epochs),
            learning_rate: b.mlp_learning_rate.unwrap_or(dm.learning_rate),
            batch_size: b.mlp_batch_size.unwrap_or(dm.batch_size),
            m_obs: raw.eval.m_obs.unwrap_or(dm.m_obs),
        };
        mlp.validate().map_err(|e| config_err(format!("[baselines] {e}")))?;

        let e = raw.eval;
        let eval = EvalSettings {
            n_inits: e.n_inits.unwrap_or(10),
            m_obs: e.m_obs.unwrap_or(3),
            integration_steps: adm.integration_steps,
            baselines: baselines.clone(),
            seed,
        };
        if eval.n_inits == 0 || eval.m_obs == 0 || eval.m_obs > grid.n_steps {
            return Err(config_err("[eval] n_inits must be positive and m_obs within 1..=n_steps"));
        }
        let methods = match e.methods {
            None => Method::ALL.to_vec(),
            Some(list) => list
                .iter()
                .map(|m| m.parse::<Method>().map_err(|err| config_err(format!("[eval].methods: {err}"))))
                .collect::<Result<Vec<_>, _>>()?,
        };

        let p = raw.particles;
        let particles = ParticleSettings {
            ensemble_sizes: p.ensemble_sizes.unwrap_or_else(|| vec![8, 32, 128]),
            steps: p.steps.unwrap_or(50),
            step_size: p.step_size.unwrap_or(0.5),
            observation_dim: p.observation_dim.unwrap_or(8),
            seeds: p.seeds.unwrap_or(10),
        };
        if particles.ensemble_sizes.iter().any(|&b| b < 2) || particles.steps == 0 || particles.seeds == 0 {
            return Err(config_err("[particles] ensembles need at least 2 members and steps/seeds must be positive"));
        }
        if !(particles.step_size > 0.0) || particles.observation_dim == 0 {
            return Err(config_err("[particles] step_size and observation_dim must be positive"));
        }

        let output_dir = match (out, raw.io.output_dir) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => o,
            (None, None) => return Err(config_err("missing key [io].output_dir (or pass --out)")),
        };

        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(seed.to_le_bytes());
        Ok(Self {
            system,
            grid,
            n_train: raw.data.n_train,
            n_test: raw.data.n_test,
            seed,
            cno,
            adm,
            baselines,
            mlp,
            eval,
            methods,
            max_samples: e.max_samples,
            record_time: e.record_time.unwrap_or(true),
            particles,
            output_dir,
            digest: format!("{:x}", h.finalize()),
        })
    }
}
