use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{EvalError, MethodReport};

pub const CSV_HEADER: &str = "method,dataset,mean,std,mae,traj_mse,traj_mae,time_s";
pub const PER_PARAM_HEADER: &str = "method,param,mean_error,std,mae,mae_physical";

/// Run context recorded next to the tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportMeta {
    pub seed: u64,
    pub n_inits: usize,
    pub m_obs: usize,
    pub config_digest: String,
    pub dataset_digest: String,
    /// Extra key/value pairs, such as solver tolerances.
    pub extra: Vec<(String, String)>,
}

/// Scientific notation with 17 significant digits, which round-trips any
/// `f64` exactly.
pub fn format_value(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Writes `results.csv`, `per_parameter.csv` and `metadata.json` into `dir`
/// and returns their paths.
pub fn write_report(reports: &[MethodReport], dir: &Path, meta: &ReportMeta) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(dir)?;
    let mut table = String::from(CSV_HEADER);
    table.push('\n');
    let mut per_param = String::from(PER_PARAM_HEADER);
    per_param.push('\n');
    for r in reports {
        let cells = [
            r.params.mean_sq_error,
            r.params.std,
            r.params.mae,
            r.traj.mse,
            r.traj.mae,
            r.time_s,
        ];
        table.push_str(&format!("{},{}", r.method, r.dataset));
        for c in cells {
            table.push(',');
            table.push_str(&format_value(c));
        }
        table.push('\n');
        for (q, s) in r.per_param.iter().enumerate() {
            per_param.push_str(&format!(
                "{},{q},{},{},{},{}\n",
                r.method,
                format_value(s.mean_error),
                format_value(s.std),
                format_value(s.mae),
                format_value(s.mae_physical)
            ));
        }
    }
    let methods: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "method": r.method,
                "label": if r.method == "es_lite" { "ES-lite: (mu, lambda) evolution strategy with isotropic step size, not full CMA-ES" } else { "" },
                "n_samples": r.n_samples,
                "n_inits": r.n_inits,
                "failures": r.failures,
            })
        })
        .collect();
    let extra: serde_json::Map<String, serde_json::Value> =
        meta.extra.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let metadata = json!({
        "seed": meta.seed,
        "n_inits": meta.n_inits,
        "m_obs": meta.m_obs,
        "config_digest": meta.config_digest,
        "dataset_digest": meta.dataset_digest,
        "conventions": {
            "mean": "mean squared parameter error over (sample, init, coordinate)",
            "std": "population (divide-by-n) std across initializations, averaged over samples and coordinates",
            "parameter_space": "unit cube",
            "trajectory_space": "standardized per species",
            "time_s": "mean wall time per (sample, initialization) run",
        },
        "methods": methods,
        "extra": extra,
    });

    let paths = [dir.join("results.csv"), dir.join("per_parameter.csv"), dir.join("metadata.json")];
    fs::write(&paths[0], table)?;
    fs::write(&paths[1], per_param)?;
    fs::write(&paths[2], serde_json::to_string_pretty(&metadata).expect("json values serialize") + "\n")?;
    Ok(paths.to_vec())
}
