//! `<out>/manifest`: digests of every output plus the run context, updated
//! by each stage.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest";

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Records `stage` with the digests of `outputs` (paths relative to the
/// output directory) and of the `inputs` it consumed.
pub fn record(cfg: &RunConfig, stage: &str, inputs: &[&str], outputs: &[String]) -> Result<(), CliError> {
    let path = cfg.output_dir.join(MANIFEST);
    let mut root: Map<String, Value> = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => Map::new(),
    };
    let digests = |names: &mut dyn Iterator<Item = &str>| -> Result<Map<String, Value>, CliError> {
        names
            .map(|n| Ok((n.to_string(), json!(file_digest(&cfg.output_dir.join(n))?))))
            .collect()
    };
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let entry = json!({
        "config_digest": cfg.digest,
        "seed": cfg.seed,
        "completed_unix": stamp,
        "inputs": digests(&mut inputs.iter().copied())?,
        "outputs": digests(&mut outputs.iter().map(String::as_str))?,
    });
    root.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
    let stages = root.entry("stages").or_insert_with(|| json!({}));
    if let Value::Object(map) = stages {
        map.insert(stage.to_string(), entry);
    }
    std::fs::write(&path, serde_json::to_string_pretty(&Value::Object(root)).expect("json values serialize") + "\n")?;
    Ok(())
}
