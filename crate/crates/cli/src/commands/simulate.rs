use std::fs::File;
use std::time::Instant;

use betapanel::data::write_panel_csv;
use betapanel::model::ModelDims;
use betapanel::simulate::{simulate_panel, SimulationScenario};
use betapanel::store;

use crate::manifest::{prepare_out_dir, Manifest};
use crate::{CliError, SimulateArgs};

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    prepare_out_dir(&args.out, args.force)?;
    let bytes = std::fs::read(&args.scenario).map_err(|e| {
        CliError::validation(format!("cannot read {}: {e}", args.scenario.display()))
    })?;
    let scenario: SimulationScenario = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::validation(format!("malformed scenario {}: {e}", args.scenario.display()))
    })?;
    let (table, truth) = simulate_panel(&scenario)?;

    // Panel CSV with the union of mean and precision covariate columns.
    let records = table.to_records();
    let mut columns: Vec<String> = Vec::new();
    for name in table.mean_names().iter().chain(table.precision_names()).skip(1) {
        if name != "intercept" && !columns.contains(name) {
            columns.push(name.clone());
        }
    }
    let panel_path = args.out.join("panel.csv");
    let file = File::create(&panel_path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", panel_path.display())))?;
    write_panel_csv(file, &records, "y", &columns)?;

    // Ground truth as a flat name -> value map plus the scenario echo.
    let dims: ModelDims = scenario.dims();
    let names = store::param_names(&dims);
    let values = store::flatten_state(&truth, &dims);
    let truth_map: serde_json::Map<String, serde_json::Value> = names
        .into_iter()
        .zip(values)
        .map(|(n, v)| (n, serde_json::json!(v)))
        .collect();
    let truth_json = serde_json::json!({
        "scenario": scenario,
        "truth": truth_map,
    });
    super::write_file(
        &args.out.join("truth.json"),
        (serde_json::to_string_pretty(&truth_json).unwrap() + "\n").as_bytes(),
    )?;

    let mut manifest = Manifest::new("simulate", scenario.seed);
    manifest.add_input(&args.scenario)?;
    manifest.outputs = vec!["panel.csv".into(), "truth.json".into()];
    manifest.details = serde_json::json!({
        "levels": scenario.levels,
        "years": scenario.years,
        "observations": table.n_obs(),
        "variant": scenario.variant,
    });
    manifest.wall_time_secs = super::elapsed_secs(start);
    manifest.write(&args.out)
}
