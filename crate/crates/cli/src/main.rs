mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ino_core::adm::AdmError;
use ino_core::baselines::BaselineError;
use ino_core::cno::CnoError;
use ino_core::datagen::DataError;
use ino_core::eval::EvalError;

#[derive(Parser)]
#[command(name = "ino", version, about = "Inverse neural operator laboratory")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "ino.toml")]
    config: PathBuf,
    /// Overrides [data].seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides [io].output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and test datasets.
    GenData,
    /// Train the surrogate.
    TrainCno,
    /// Train the drifting model against the frozen surrogate.
    TrainAdm,
    /// Train the gradient-supervised ablation.
    TrainFmgrad,
    /// Train the direct regression baseline.
    TrainMlp,
    /// Invert one test sample with one method.
    Invert {
        #[arg(long, default_value = "adm")]
        method: String,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Benchmark the configured methods on the test set.
    Eval,
    /// Run the interacting-particle diagnostics on a linear map.
    ParticleLab,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Missing(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Config(_) => "config",
            CliError::Missing(_) => "missing",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Missing(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Solver { .. } | DataError::Ode(_) => CliError::Numerical(e.to_string()),
            DataError::Io(_) | DataError::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CnoError> for CliError {
    fn from(e: CnoError) -> Self {
        match e {
            CnoError::Diverged { .. } | CnoError::Numerics(_) => CliError::Numerical(e.to_string()),
            CnoError::Config(_) => CliError::Config(e.to_string()),
            CnoError::Data(inner) => inner.into(),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<AdmError> for CliError {
    fn from(e: AdmError) -> Self {
        match e {
            AdmError::Diverged { .. } | AdmError::NonFiniteState(_) | AdmError::Numerics(_) => CliError::Numerical(e.to_string()),
            AdmError::Config(_) => CliError::Config(e.to_string()),
            AdmError::Surrogate(inner) => inner.into(),
            AdmError::Data(inner) => inner.into(),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::NanGradient(_) | BaselineError::Diverged { .. } | BaselineError::Numerics(_) => {
                CliError::Numerical(e.to_string())
            }
            BaselineError::Config(_) => CliError::Config(e.to_string()),
            BaselineError::Surrogate(inner) => inner.into(),
            BaselineError::Adm(inner) => inner.into(),
            BaselineError::Data(inner) => inner.into(),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MissingModel(_) => CliError::Missing(e.to_string()),
            EvalError::UnknownMethod(_) | EvalError::Empty => CliError::Config(e.to_string()),
            EvalError::Surrogate(inner) => inner.into(),
            EvalError::Baseline(inner) => inner.into(),
            EvalError::Shape(_) => CliError::Numerical(e.to_string()),
            EvalError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::RunConfig::load(&cli.config, cli.seed, cli.out.as_deref())?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::TrainCno => commands::train_cno(&cfg),
        Command::TrainAdm => commands::train_adm(&cfg),
        Command::TrainFmgrad => commands::train_fmgrad(&cfg),
        Command::TrainMlp => commands::train_mlp(&cfg),
        Command::Invert { method, sample } => commands::invert(&cfg, &method, sample),
        Command::Eval => commands::eval(&cfg),
        Command::ParticleLab => commands::particle_lab(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}
