//! Writing run artifacts and the run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Window, SCHEMA_VERSION};
use crate::data::ObservationTable;
use crate::error::{CliError, Result};
use crate::pipeline::{RunResult, Summary};

pub const MANIFEST: &str = "manifest.json";

/// Wall-clock fields, the only part of a run that may differ between
/// reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub threads: usize,
    pub timings_secs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Hash of the data in canonical form (sorted, re-serialized).
    pub data_sha256: String,
    pub window: Option<Window>,
    pub outputs: BTreeMap<String, String>,
    pub summary: Summary,
    pub runtime: Runtime,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn data_hash(data: &ObservationTable) -> String {
    let mut buf = Vec::new();
    data.write_csv(&mut buf).expect("writing to memory");
    sha256(&buf)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(CliError::output(path))
}

/// Write every output file and the manifest into `dir`.
pub fn write_run(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    data: &ObservationTable,
    result: &RunResult,
    threads: usize,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(CliError::output(dir))?;
    let mut outputs = BTreeMap::new();
    for (name, contents) in &result.files {
        write(&dir.join(name), contents.as_bytes())?;
        outputs.insert(name.clone(), sha256(contents.as_bytes()));
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        data_sha256: data_hash(data),
        window: result.window,
        outputs,
        summary: result.summary.clone(),
        runtime: Runtime {
            threads,
            timings_secs: result.timings.clone(),
        },
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

/// Manifest JSON with the runtime block removed, for determinism checks.
pub fn manifest_without_runtime(json: &str) -> Result<serde_json::Value> {
    let mut v: serde_json::Value =
        serde_json::from_str(json).map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("runtime");
    }
    Ok(v)
}
