//! Run manifests: every command writes one next to its outputs, recording
//! the exact configuration, seed and produced files, so a run can be
//! reproduced and `eval` can refuse result sets of mixed provenance.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct ComponentFlags {
    pub dmc: bool,
    pub rs: bool,
    pub gate_mode: String,
    pub u: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub flags: ComponentFlags,
    pub inputs: Vec<String>,
    /// File names (relative to the manifest directory) this run produced.
    pub outputs: Vec<String>,
    /// The fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub timestamp_unix: u64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Atomic write: serialize to a temp file in the same directory, then
/// rename over the target.
pub fn write_atomic(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(".manifest.json.tmp");
    let body = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&tmp, body).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, dir.join(MANIFEST_NAME))?;
    Ok(())
}

pub fn read(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("no run manifest at {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Verify that every result file in `dir` is accounted for by its
/// manifest; mixed or unmanifested result sets are rejected unless forced.
pub fn check_results_consistent(dir: &Path) -> Result<RunManifest> {
    let manifest = read(dir)?;
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".txt") && !manifest.outputs.contains(&name) {
            bail!(
                "result file {name} in {} is not listed in the run manifest; \
                 refusing a mixed result set (use --force to override)",
                dir.display()
            );
        }
    }
    Ok(manifest)
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
