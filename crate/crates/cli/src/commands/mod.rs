pub mod compare;
pub mod diagnose;
pub mod fit;
pub mod predict;
pub mod simulate;
pub mod standardize;
pub mod stratify;

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use betapanel::data::{build_table, read_panel_csv, ObservationTable};
use betapanel::mcmc::ChainOutput;
use betapanel::model::{ModelDims, ModelSpec};
use betapanel::store::read_chain_csv;

use crate::manifest::{read_manifest, verify_input};
use crate::CliError;

/// Wall time since `start`, for the manifest.
pub fn elapsed_secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Write a file, mapping failures to runtime errors.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

/// A fitted run loaded back from disk: the manifest's embedded model spec,
/// the (hash-verified) data rebuilt into a table, and all stored chains.
pub struct LoadedRun {
    pub label: String,
    pub spec: ModelSpec,
    pub table: ObservationTable,
    pub dims: ModelDims,
    pub chains: Vec<ChainOutput>,
    pub seed: u64,
}

pub fn load_run(run_dir: &Path) -> Result<LoadedRun, CliError> {
    let manifest = read_manifest(run_dir)?;
    if manifest.subcommand != "fit" {
        return Err(CliError::validation(format!(
            "{} holds a '{}' run, not a fit",
            run_dir.display(),
            manifest.subcommand
        )));
    }
    let spec_value = manifest.model_spec.clone().ok_or_else(|| {
        CliError::validation(format!("{} has no embedded model spec", run_dir.display()))
    })?;
    let spec: ModelSpec = serde_json::from_value(spec_value)
        .map_err(|e| CliError::validation(format!("malformed embedded model spec: {e}")))?;
    let data_record = manifest
        .inputs
        .first()
        .ok_or_else(|| CliError::validation("fit manifest records no inputs".to_string()))?;
    let data_path = verify_input(data_record)?;
    let file = File::open(&data_path)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", data_path.display())))?;
    let parsed = read_panel_csv(file, "y")?;
    let table = build_table(&parsed.records, &spec)?;
    let dims = ModelDims::new(&spec, &table)?;
    let mut chains = Vec::new();
    for name in &manifest.outputs {
        let path = run_dir.join(name);
        let file = File::open(&path)
            .map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))?;
        let mut chain = read_chain_csv(file, &dims)?;
        chain.chain_index = chains.len() as u32;
        chains.push(chain);
    }
    if chains.is_empty() {
        return Err(CliError::validation(format!(
            "{} records no chain files",
            run_dir.display()
        )));
    }
    let label = manifest
        .details
        .get("model_label")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
        .unwrap_or_else(|| spec.display_label());
    Ok(LoadedRun { label, spec, table, dims, chains, seed: manifest.seed })
}
