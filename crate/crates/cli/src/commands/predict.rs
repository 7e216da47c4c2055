use std::fs::File;
use std::time::Instant;

use betapanel::data::format_g17;
use betapanel::mcmc::ChainOutput;
use betapanel::selection::{predictive_summary, replicate};

use crate::manifest::{prepare_out_dir, Manifest};
use crate::{CliError, PredictArgs};

pub fn run(args: PredictArgs) -> Result<(), CliError> {
    let start = Instant::now();
    prepare_out_dir(&args.out, args.force)?;
    let run = super::load_run(&args.run)?;
    let pooled = ChainOutput::merge(&run.chains)?;

    // Enough replicates for the 2.5%/97.5% band by default.
    let reps_per_draw = args.reps.unwrap_or_else(|| (40 + pooled.len() - 1) / pooled.len().max(1)).max(1);
    let reps = replicate(&pooled, &run.table, &run.spec, reps_per_draw, run.seed, "predict")?;
    let rows = predictive_summary(&reps, &run.table)?;

    let csv_path = args.out.join("predictive.csv");
    let file = File::create(&csv_path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", csv_path.display())))?;
    let mut wr = csv::Writer::from_writer(file);
    wr.write_record(["level", "school_id", "year", "observed", "mean", "lower", "upper", "outside_band"])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let mut outside = 0usize;
    for row in &rows {
        outside += row.outside_band as usize;
        wr.write_record([
            row.level.to_string(),
            row.school_id.clone(),
            row.year.to_string(),
            format_g17(row.observed),
            format_g17(row.mean),
            format_g17(row.lower),
            format_g17(row.upper),
            row.outside_band.to_string(),
        ])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    wr.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    eprintln!(
        "predict: {} observations, {} outside the 95% band ({:.1}%)",
        rows.len(),
        outside,
        100.0 * outside as f64 / rows.len() as f64
    );

    let mut manifest = Manifest::new("predict", run.seed);
    manifest.add_input(&args.run.join("manifest.json"))?;
    manifest.outputs = vec!["predictive.csv".into()];
    manifest.details = serde_json::json!({
        "run": args.run.display().to_string(),
        "model_label": run.label,
        "reps_per_draw": reps_per_draw,
        "replicates_per_observation": reps.reps_per_obs,
        "outside_band": outside,
    });
    manifest.wall_time_secs = super::elapsed_secs(start);
    manifest.write(&args.out)
}
