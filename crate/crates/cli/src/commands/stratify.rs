use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::time::Instant;

use betapanel::design::{
    dalenius_hodges_boundaries, retain_panel, strata_definition, stratified_sample, stratum_of,
    SamplingUnit,
};

use crate::manifest::{prepare_out_dir, Manifest};
use crate::{CliError, StratifyArgs};

struct Population {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &std::path::Path) -> Result<Population, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))?;
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| CliError::validation(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| CliError::validation(e.to_string()))?;
        rows.push(rec.iter().map(|f| f.to_string()).collect());
    }
    Ok(Population { header, rows })
}

fn column<'a>(pop: &'a Population, name: &str) -> Result<usize, CliError> {
    pop.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::validation(format!("population CSV lacks column '{name}'")))
}

pub fn run(args: StratifyArgs) -> Result<(), CliError> {
    let start = Instant::now();
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(CliError::validation(format!(
            "--fraction must lie in (0, 1], got {}",
            args.fraction
        )));
    }
    prepare_out_dir(&args.out, args.force)?;
    let pop = read_csv(&args.input)?;
    let id_col = column(&pop, &args.id_col)?;
    let value_col = column(&pop, &args.value_col)?;
    let certainty_col = args
        .certainty_col
        .as_deref()
        .map(|c| column(&pop, c))
        .transpose()?;
    let by_cols: Vec<usize> = args
        .by
        .iter()
        .map(|c| column(&pop, c))
        .collect::<Result<_, _>>()?;

    let mut values = Vec::with_capacity(pop.rows.len());
    let mut certainty = Vec::with_capacity(pop.rows.len());
    for (k, row) in pop.rows.iter().enumerate() {
        let v: f64 = row[value_col].trim().parse().map_err(|_| {
            CliError::validation(format!(
                "row {}: cannot parse {} value '{}'",
                k + 2,
                args.value_col,
                row[value_col]
            ))
        })?;
        values.push(v);
        let is_certain = certainty_col
            .map(|c| {
                let raw = row[c].trim();
                raw == "1" || raw.eq_ignore_ascii_case("true")
            })
            .unwrap_or(false);
        certainty.push(is_certain);
    }

    // Bands are built over the units subject to random selection.
    let band_values: Vec<f64> = values
        .iter()
        .zip(&certainty)
        .filter(|(_, &c)| !c)
        .map(|(&v, _)| v)
        .collect();
    if band_values.is_empty() {
        return Err(CliError::validation(
            "every unit is a certainty unit; nothing to stratify",
        ));
    }
    let boundaries = dalenius_hodges_boundaries(&band_values, args.strata)?;

    let units: Vec<SamplingUnit> = pop
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut label_parts: Vec<String> =
                by_cols.iter().map(|&c| row[c].trim().to_string()).collect();
            label_parts.push(format!("band{}", stratum_of(values[k], &boundaries) + 1));
            SamplingUnit {
                id: row[id_col].clone(),
                stratum: label_parts.join("|"),
                certainty: certainty[k],
            }
        })
        .collect();

    let mut selected = stratified_sample(&units, args.fraction, args.seed)?;

    if let Some(participation_path) = &args.participation {
        let part = read_csv(participation_path)?;
        let unit_col = column(&part, &args.id_col)?;
        let year_col = column(&part, "year")?;
        let mut participation: BTreeMap<String, BTreeSet<i64>> = BTreeMap::new();
        for (k, row) in part.rows.iter().enumerate() {
            let year: i64 = row[year_col].trim().parse().map_err(|_| {
                CliError::validation(format!(
                    "participation row {}: cannot parse year '{}'",
                    k + 2,
                    row[year_col]
                ))
            })?;
            participation.entry(row[unit_col].clone()).or_default().insert(year);
        }
        selected = retain_panel(&selected, &participation, &args.years);
    }

    // Sample CSV: the selected input rows with their stratum label appended.
    let selected_ids: BTreeMap<&str, &str> =
        selected.iter().map(|u| (u.id.as_str(), u.stratum.as_str())).collect();
    let sample_path = args.out.join("sample.csv");
    let file = File::create(&sample_path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", sample_path.display())))?;
    let mut wr = csv::Writer::from_writer(file);
    let mut header = pop.header.clone();
    header.push("stratum".into());
    wr.write_record(&header).map_err(|e| CliError::runtime(e.to_string()))?;
    for row in &pop.rows {
        if let Some(stratum) = selected_ids.get(row[id_col].as_str()) {
            let mut out_row = row.clone();
            out_row.push((*stratum).to_string());
            wr.write_record(&out_row).map_err(|e| CliError::runtime(e.to_string()))?;
        }
    }
    wr.flush().map_err(|e| CliError::runtime(e.to_string()))?;

    // Strata report: boundaries plus per-stratum composition of the
    // band variable within the non-certainty population.
    let band_def = strata_definition(&band_values, &boundaries);
    let mut per_stratum: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for unit in &units {
        per_stratum.entry(unit.stratum.clone()).or_default().0 += 1;
    }
    for unit in &selected {
        per_stratum.entry(unit.stratum.clone()).or_default().1 += 1;
    }
    let strata_json = serde_json::json!({
        "value_col": args.value_col,
        "boundaries": band_def.boundaries,
        "band_counts": band_def.counts,
        "band_weights": band_def.weights,
        "band_within_variances": band_def.within_variances,
        "objective": band_def.objective(),
        "strata": per_stratum
            .iter()
            .map(|(label, (population, selected))| {
                serde_json::json!({
                    "label": label,
                    "population": population,
                    "selected": selected,
                })
            })
            .collect::<Vec<_>>(),
        "certainty_units": certainty.iter().filter(|&&c| c).count(),
        "selected_total": selected.len(),
    });
    super::write_file(
        &args.out.join("strata.json"),
        (serde_json::to_string_pretty(&strata_json).unwrap() + "\n").as_bytes(),
    )?;

    let mut manifest = Manifest::new("stratify", args.seed);
    manifest.add_input(&args.input)?;
    if let Some(p) = &args.participation {
        manifest.add_input(p)?;
    }
    manifest.outputs = vec!["sample.csv".into(), "strata.json".into()];
    manifest.details = serde_json::json!({
        "fraction": args.fraction,
        "strata": args.strata,
        "by": args.by,
        "years": args.years,
        "selected": selected.len(),
        "population": pop.rows.len(),
    });
    manifest.wall_time_secs = super::elapsed_secs(start);
    manifest.write(&args.out)
}
