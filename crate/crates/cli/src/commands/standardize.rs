use std::collections::BTreeMap;
use std::fs::File;
use std::time::Instant;

use betapanel::data::{build_raw_scores, read_panel_csv, write_panel_csv, RawRecord};
use betapanel::standardize::standardize_scores;

use crate::manifest::{prepare_out_dir, Manifest};
use crate::{CliError, StandardizeArgs};

pub fn run(args: StandardizeArgs) -> Result<(), CliError> {
    let start = Instant::now();
    prepare_out_dir(&args.out, args.force)?;
    let file = File::open(&args.input)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", args.input.display())))?;
    let parsed = read_panel_csv(file, &args.score_col).map_err(CliError::from)?;
    let raw = build_raw_scores(&parsed.records, args.s_max)?;
    let (responses, summary) = standardize_scores(&raw)?;

    // Rebuild output records in canonical order, passing the input's
    // covariate columns through untouched.
    let mut covariates_by_key: BTreeMap<(i64, &str, i64), &BTreeMap<String, f64>> = BTreeMap::new();
    for r in &parsed.records {
        covariates_by_key.insert((r.level, r.school_id.as_str(), r.year), &r.covariates);
    }
    let mut out_records = Vec::with_capacity(raw.layout.n_obs());
    for idx in raw.layout.iter() {
        let level = raw.level_labels[idx.level - 1];
        let school_id = raw.school_ids[idx.level - 1][idx.school - 1].clone();
        let year = raw.year_labels[idx.year - 1];
        let covariates = covariates_by_key
            .get(&(level, school_id.as_str(), year))
            .map(|c| (*c).clone())
            .unwrap_or_default();
        out_records.push(RawRecord {
            level,
            school_id,
            year,
            response: responses[raw.layout.offset(idx)],
            covariates,
        });
    }

    let responses_path = args.out.join("responses.csv");
    let file = File::create(&responses_path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", responses_path.display())))?;
    write_panel_csv(file, &out_records, "y", &parsed.extra_columns)?;

    let summary_path = args.out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    super::write_file(&summary_path, (json + "\n").as_bytes())?;

    let mut manifest = Manifest::new("standardize", 0);
    manifest.add_input(&args.input)?;
    manifest.outputs = vec!["responses.csv".into(), "summary.json".into()];
    manifest.details = serde_json::json!({
        "s_max": args.s_max,
        "score_col": args.score_col,
        "cells": summary.cells.len(),
        "observations": raw.layout.n_obs(),
    });
    manifest.wall_time_secs = super::elapsed_secs(start);
    manifest.write(&args.out)
}
