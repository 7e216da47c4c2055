use std::fs::File;
use std::time::Instant;

use betapanel::data::format_g17;
use betapanel::mcmc::ChainOutput;
use betapanel::model::{DensityScale, Family};
use betapanel::selection::{
    dic_on, logs_on, observed_vector, replicate, rps, ScoreReport,
};
use betapanel::special::logit;

use crate::manifest::{prepare_out_dir, Manifest};
use crate::{CliError, CompareArgs};

struct Row {
    report: ScoreReport,
    /// Scores on the response scale are mutually comparable; logit-scale
    /// rows of the normal baseline are reported but excluded from the
    /// best-model flags.
    on_response_scale: bool,
    best_dic: bool,
    best_rps: bool,
    best_logs: bool,
}

pub fn run(args: CompareArgs) -> Result<(), CliError> {
    let start = Instant::now();
    prepare_out_dir(&args.out, args.force)?;

    let mut rows: Vec<Row> = Vec::new();
    let mut manifest = Manifest::new("compare", 0);
    for run_dir in &args.runs {
        let run = super::load_run(run_dir)?;
        manifest.add_input(&run_dir.join("manifest.json"))?;
        let pooled = ChainOutput::merge(&run.chains)?;
        let observed = observed_vector(&run.table);

        let dic = dic_on(&pooled, &run.table, &run.spec, DensityScale::Response)?;
        let logs = logs_on(&pooled, &run.table, &run.spec, DensityScale::Response)?;
        let rep_a = replicate(&pooled, &run.table, &run.spec, args.reps, run.seed, "rps-a")?;
        let rep_b = replicate(&pooled, &run.table, &run.spec, args.reps, run.seed, "rps-b")?;
        let rps_y = rps(&rep_a, &rep_b, &observed)?;
        rows.push(Row {
            report: ScoreReport::new(run.label.clone(), dic, rps_y, logs),
            on_response_scale: true,
            best_dic: false,
            best_rps: false,
            best_logs: false,
        });

        if run.spec.family == Family::NormalLogit {
            let dic_l = dic_on(&pooled, &run.table, &run.spec, DensityScale::Logit)?;
            let logs_l = logs_on(&pooled, &run.table, &run.spec, DensityScale::Logit)?;
            let observed_l: Vec<f64> = observed.iter().map(|&y| logit(y)).collect();
            let rps_l = rps(
                &rep_a.transformed(logit),
                &rep_b.transformed(logit),
                &observed_l,
            )?;
            rows.push(Row {
                report: ScoreReport::new(format!("{}@logit", run.label), dic_l, rps_l, logs_l),
                on_response_scale: false,
                best_dic: false,
                best_rps: false,
                best_logs: false,
            });
        }
    }

    // Best-per-criterion flags among mutually comparable rows.
    let flag_best = |rows: &mut Vec<Row>, get: fn(&ScoreReport) -> f64, set: fn(&mut Row, bool)| {
        let best = rows
            .iter()
            .filter(|r| r.on_response_scale)
            .map(|r| get(&r.report))
            .fold(f64::INFINITY, f64::min);
        for row in rows.iter_mut() {
            let is_best = row.on_response_scale && get(&row.report) == best;
            set(row, is_best);
        }
    };
    flag_best(&mut rows, |r| r.dic, |row, v| row.best_dic = v);
    flag_best(&mut rows, |r| r.rps, |row, v| row.best_rps = v);
    flag_best(&mut rows, |r| r.logs, |row, v| row.best_logs = v);

    // CSV table.
    let csv_path = args.out.join("comparison.csv");
    let file = File::create(&csv_path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", csv_path.display())))?;
    let mut wr = csv::Writer::from_writer(file);
    wr.write_record([
        "model", "d_bar", "p_d", "dic", "rps", "logs", "best_dic", "best_rps", "best_logs",
    ])
    .map_err(|e| CliError::runtime(e.to_string()))?;
    for row in &rows {
        wr.write_record([
            row.report.model_label.clone(),
            format_g17(row.report.d_bar),
            format_g17(row.report.p_d),
            format_g17(row.report.dic),
            format_g17(row.report.rps),
            format_g17(row.report.logs),
            row.best_dic.to_string(),
            row.best_rps.to_string(),
            row.best_logs.to_string(),
        ])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    wr.flush().map_err(|e| CliError::runtime(e.to_string()))?;

    // Aligned text table on stdout; a star marks the best value per
    // criterion among comparable rows.
    println!(
        "{:<18} {:>14} {:>10} {:>14} {:>10} {:>9}",
        "Model", "D_bar", "p_D", "DIC", "RPS", "LogS"
    );
    for row in &rows {
        let star = |b: bool| if b { "*" } else { " " };
        println!(
            "{:<18} {:>14.2} {:>10.2} {:>13.2}{} {:>9.5}{} {:>8.3}{}",
            row.report.model_label,
            row.report.d_bar,
            row.report.p_d,
            row.report.dic,
            star(row.best_dic),
            row.report.rps,
            star(row.best_rps),
            row.report.logs,
            star(row.best_logs),
        );
    }

    manifest.outputs = vec!["comparison.csv".into()];
    manifest.details = serde_json::json!({
        "runs": args.runs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "reps_per_draw": args.reps,
    });
    manifest.wall_time_secs = super::elapsed_secs(start);
    manifest.write(&args.out)
}
