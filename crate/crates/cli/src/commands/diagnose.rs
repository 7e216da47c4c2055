use std::fs::File;
use std::time::Instant;

use betapanel::data::format_g17;
use betapanel::diagnostics::diagnostics;

use crate::manifest::{prepare_out_dir, Manifest};
use crate::{CliError, DiagnoseArgs};

pub fn run(args: DiagnoseArgs) -> Result<(), CliError> {
    let start = Instant::now();
    prepare_out_dir(&args.out, args.force)?;
    let run = super::load_run(&args.run)?;
    let report = diagnostics(&run.chains, &run.dims)?;

    let csv_path = args.out.join("diagnostics.csv");
    let file = File::create(&csv_path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", csv_path.display())))?;
    let mut wr = csv::Writer::from_writer(file);
    wr.write_record(["parameter", "mean", "sd", "ess", "geweke_z", "psrf"])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let fmt_opt = |v: Option<f64>| v.map(format_g17).unwrap_or_default();
    for p in &report {
        wr.write_record([
            p.name.clone(),
            format_g17(p.mean),
            format_g17(p.sd),
            fmt_opt(p.ess),
            fmt_opt(p.geweke_z),
            fmt_opt(p.psrf),
        ])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    wr.flush().map_err(|e| CliError::runtime(e.to_string()))?;

    let min_ess = report.iter().filter_map(|p| p.ess).fold(f64::INFINITY, f64::min);
    let max_z = report
        .iter()
        .filter_map(|p| p.geweke_z)
        .fold(0.0f64, |acc, z| acc.max(z.abs()));
    let max_psrf = report.iter().filter_map(|p| p.psrf).fold(0.0f64, f64::max);
    let degenerate = report.iter().filter(|p| p.ess.is_none()).count();
    println!(
        "diagnose: {} parameters over {} chain(s); min ESS {:.0}, max |Geweke z| {:.2}{}{}",
        report.len(),
        run.chains.len(),
        min_ess,
        max_z,
        if run.chains.len() >= 2 {
            format!(", max PSRF {max_psrf:.3}")
        } else {
            String::new()
        },
        if degenerate > 0 {
            format!(", {degenerate} degenerate (constant) series")
        } else {
            String::new()
        },
    );

    let mut manifest = Manifest::new("diagnose", run.seed);
    manifest.add_input(&args.run.join("manifest.json"))?;
    manifest.outputs = vec!["diagnostics.csv".into()];
    manifest.details = serde_json::json!({
        "run": args.run.display().to_string(),
        "chains": run.chains.len(),
        "parameters": report.len(),
        "min_ess": if min_ess.is_finite() { Some(min_ess) } else { None },
        "max_abs_geweke_z": max_z,
        "degenerate_series": degenerate,
    });
    manifest.wall_time_secs = super::elapsed_secs(start);
    manifest.write(&args.out)
}
