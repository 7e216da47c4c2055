use std::fs::File;
use std::time::Instant;

use betapanel::data::{build_table, read_panel_csv_path};
use betapanel::mcmc::{run_chains, SamplerConfig};
use betapanel::model::{ModelDims, ModelSpec, PrecisionVariant};
use betapanel::store::write_chain_csv;

use crate::manifest::{prepare_out_dir, Manifest};
use crate::{CliError, FitArgs};

fn parse_variant(s: &str) -> Result<PrecisionVariant, CliError> {
    match s.to_ascii_uppercase().as_str() {
        "M1" => Ok(PrecisionVariant::M1),
        "M2" => Ok(PrecisionVariant::M2),
        "M3" => Ok(PrecisionVariant::M3),
        "M4" => Ok(PrecisionVariant::M4),
        "M5" => Ok(PrecisionVariant::M5),
        other => Err(CliError::validation(format!(
            "unknown model variant '{other}' (expected M1..M5)"
        ))),
    }
}

pub fn chain_file_name(chain: u32) -> String {
    format!("chain_{chain:02}.csv")
}

pub fn run(args: FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    prepare_out_dir(&args.out, args.force)?;

    let spec_bytes = std::fs::read(&args.spec)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", args.spec.display())))?;
    let mut spec: ModelSpec = serde_json::from_slice(&spec_bytes)
        .map_err(|e| CliError::validation(format!("malformed model spec: {e}")))?;
    if let Some(model) = &args.model {
        spec.variant = parse_variant(model)?;
        if spec.variant == PrecisionVariant::M1 {
            spec.precision_covariates.clear();
        }
    }
    spec.validate()?;

    let mut config = match &args.sampler {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| {
                CliError::validation(format!("cannot read {}: {e}", path.display()))
            })?;
            serde_json::from_slice::<SamplerConfig>(&bytes)
                .map_err(|e| CliError::validation(format!("malformed sampler config: {e}")))?
        }
        None => SamplerConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(chains) = args.chains {
        config.chains = chains;
    }
    config.warm_start |= args.warm_start;
    config.progress = !args.quiet;
    config.validate()?;

    let parsed = read_panel_csv_path(&args.data)?;
    let table = build_table(&parsed.records, &spec)?;
    let dims = ModelDims::new(&spec, &table)?;

    let outputs = run_chains(&table, &spec, &config)?;
    let mut chain_files = Vec::new();
    for out in &outputs {
        let name = chain_file_name(out.chain_index);
        let path = args.out.join(&name);
        let file = File::create(&path)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))?;
        write_chain_csv(file, out, &dims)?;
        chain_files.push(name);
    }

    let acceptance: serde_json::Map<String, serde_json::Value> = outputs
        .iter()
        .flat_map(|out| {
            out.blocks.iter().map(move |b| {
                (
                    format!("chain{}:{}", out.chain_index, b.name),
                    serde_json::json!({
                        "acceptance_rate": b.acceptance_rate,
                        "proposal_scale": b.proposal_scale,
                        "dim": b.dim,
                    }),
                )
            })
        })
        .collect();

    let mut manifest = Manifest::new("fit", config.seed);
    manifest.add_input(&args.data)?;
    manifest.add_input(&args.spec)?;
    if let Some(path) = &args.sampler {
        manifest.add_input(path)?;
    }
    manifest.outputs = chain_files.clone();
    manifest.model_spec = Some(serde_json::to_value(&spec).unwrap());
    manifest.sampler_config = Some(serde_json::to_value(&config).unwrap());
    manifest.details = serde_json::json!({
        "model_label": spec.display_label(),
        "chains": chain_files,
        "stored_draws_per_chain": config.stored_draws(),
        "observations": table.n_obs(),
        "blocks": acceptance,
    });
    manifest.wall_time_secs = super::elapsed_secs(start);
    manifest.write(&args.out)
}
