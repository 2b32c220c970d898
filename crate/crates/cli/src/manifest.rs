use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub version: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ManifestLog {
    pub runs: Vec<RunManifest>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn read(dir: &Path) -> Result<ManifestLog> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(ManifestLog::default());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Appends `run` to the directory's manifest, creating it if needed.
pub fn append(dir: &Path, run: RunManifest) -> Result<()> {
    let mut log = read(dir)?;
    log.runs.push(run);
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&log).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}
