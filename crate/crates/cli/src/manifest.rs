//! Run manifests: every subcommand writes a `manifest.json` into its output
//! directory recording inputs (with content hashes), the effective
//! configuration, the seed, outputs, and wall time. An existing manifest is
//! never overwritten unless `--force` is given.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    /// Canonical absolute path at run time, for downstream subcommands.
    pub abs_path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_spec: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler_config: Option<serde_json::Value>,
    #[serde(default)]
    pub details: serde_json::Value,
    pub wall_time_secs: f64,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: "betapanel".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            model_spec: None,
            sampler_config: None,
            details: serde_json::Value::Null,
            wall_time_secs: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| {
            CliError::validation(format!("cannot read input {}: {e}", path.display()))
        })?;
        let abs = path
            .canonicalize()
            .map_err(|e| CliError::validation(format!("cannot resolve {}: {e}", path.display())))?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            abs_path: abs.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::runtime(format!("manifest serialization failed: {e}")))?;
        fs::write(&path, json + "\n")
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Prepare an output directory: create it if absent, and refuse to reuse a
/// directory that already holds a manifest unless `force` is set.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    let manifest = out.join("manifest.json");
    if manifest.exists() && !force {
        return Err(CliError::validation(format!(
            "{} already holds a run manifest; pass --force to overwrite",
            out.display()
        )));
    }
    Ok(())
}

/// Load a manifest back from a run directory.
pub fn read_manifest(run_dir: &Path) -> Result<Manifest, CliError> {
    let path = run_dir.join("manifest.json");
    let bytes = fs::read(&path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::validation(format!("malformed manifest {}: {e}", path.display())))
}

/// Verify that a recorded input still hashes to the same content, and return
/// its resolved path.
pub fn verify_input(record: &InputRecord) -> Result<PathBuf, CliError> {
    let path = PathBuf::from(&record.abs_path);
    let bytes = fs::read(&path).map_err(|e| {
        CliError::validation(format!(
            "recorded input {} is no longer readable: {e}",
            path.display()
        ))
    })?;
    let hash = hex::encode(Sha256::digest(&bytes));
    if hash != record.sha256 {
        return Err(CliError::validation(format!(
            "input {} changed since the fit was run (hash mismatch)",
            path.display()
        )));
    }
    Ok(path)
}
