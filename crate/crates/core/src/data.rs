//! Panel container and design-matrix construction.
//!
//! The engine works on a balanced panel of bounded responses indexed by
//! (educational level `i`, school `j`, year `t`). Levels, years and
//! school ids found in the input are mapped to dense 1-based indices;
//! the original labels are retained for reporting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// One cell of the balanced panel. All indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PanelIndex {
    pub level: usize,
    pub school: usize,
    pub year: usize,
}

/// Shape of a balanced panel: `I` levels, `T` years, `n_i` schools per level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelLayout {
    n_years: usize,
    schools_per_level: Vec<usize>,
    /// Flat offset of the first observation of each level.
    level_offsets: Vec<usize>,
}

impl PanelLayout {
    pub fn new(schools_per_level: Vec<usize>, n_years: usize) -> Result<Self> {
        if schools_per_level.is_empty() || n_years == 0 {
            return Err(Error::InvalidData(
                "panel needs at least one level and one year".into(),
            ));
        }
        let mut level_offsets = Vec::with_capacity(schools_per_level.len());
        let mut off = 0;
        for &n in &schools_per_level {
            level_offsets.push(off);
            off += n * n_years;
        }
        Ok(Self {
            n_years,
            schools_per_level,
            level_offsets,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.schools_per_level.len()
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn n_schools(&self, level: usize) -> usize {
        self.schools_per_level[level - 1]
    }

    pub fn n_obs(&self) -> usize {
        self.schools_per_level.iter().map(|n| n * self.n_years).sum()
    }

    /// Flat position of an index; canonical order is (level, school, year).
    pub fn offset(&self, idx: PanelIndex) -> usize {
        debug_assert!(idx.level >= 1 && idx.level <= self.n_levels());
        debug_assert!(idx.school >= 1 && idx.school <= self.n_schools(idx.level));
        debug_assert!(idx.year >= 1 && idx.year <= self.n_years);
        self.level_offsets[idx.level - 1] + (idx.school - 1) * self.n_years + (idx.year - 1)
    }

    /// All indices in canonical (flat) order.
    pub fn iter(&self) -> impl Iterator<Item = PanelIndex> + '_ {
        (1..=self.n_levels()).flat_map(move |level| {
            (1..=self.n_schools(level)).flat_map(move |school| {
                (1..=self.n_years).map(move |year| PanelIndex { level, school, year })
            })
        })
    }
}

/// An ingested record before panel assembly.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub level: i64,
    pub school_id: String,
    pub year: i64,
    pub response: f64,
    pub covariates: BTreeMap<String, f64>,
}

/// Immutable panel of (0,1) responses with mean and precision design rows.
///
/// Covariate vectors always start with the intercept 1. Construction is
/// single-threaded; after that the table is read-only and freely shared.
#[derive(Debug, Clone)]
pub struct ObservationTable {
    layout: PanelLayout,
    responses: Vec<f64>,
    mean_covariates: Vec<f64>,
    precision_covariates: Vec<f64>,
    p: usize,
    q: usize,
    mean_names: Vec<String>,
    precision_names: Vec<String>,
    /// Original school ids, per level, in dense-j order.
    school_ids: Vec<Vec<String>>,
    /// Original year labels in dense-t order.
    year_labels: Vec<i64>,
    /// Original level labels in dense-i order.
    level_labels: Vec<i64>,
}

impl ObservationTable {
    pub fn layout(&self) -> &PanelLayout {
        &self.layout
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_obs(&self) -> usize {
        self.responses.len()
    }

    pub fn response(&self, idx: PanelIndex) -> f64 {
        self.responses[self.layout.offset(idx)]
    }

    pub fn mean_row(&self, idx: PanelIndex) -> &[f64] {
        let o = self.layout.offset(idx);
        &self.mean_covariates[o * self.p..(o + 1) * self.p]
    }

    pub fn precision_row(&self, idx: PanelIndex) -> &[f64] {
        let o = self.layout.offset(idx);
        &self.precision_covariates[o * self.q..(o + 1) * self.q]
    }

    pub fn mean_names(&self) -> &[String] {
        &self.mean_names
    }

    pub fn precision_names(&self) -> &[String] {
        &self.precision_names
    }

    pub fn school_id(&self, level: usize, school: usize) -> &str {
        &self.school_ids[level - 1][school - 1]
    }

    pub fn year_label(&self, year: usize) -> i64 {
        self.year_labels[year - 1]
    }

    pub fn level_label(&self, level: usize) -> i64 {
        self.level_labels[level - 1]
    }

    /// A data-free table (levels and years exist, zero schools). Used to run
    /// the sampler against the prior alone.
    pub fn empty(n_levels: usize, n_years: usize, p: usize, q: usize) -> Result<Self> {
        if n_levels == 0 || n_years == 0 || p == 0 || q == 0 {
            return Err(Error::InvalidData("empty table still needs I, T, p, q >= 1".into()));
        }
        let layout = PanelLayout::new(vec![0; n_levels], n_years)?;
        Ok(Self {
            layout,
            responses: Vec::new(),
            mean_covariates: Vec::new(),
            precision_covariates: Vec::new(),
            p,
            q,
            mean_names: (0..p).map(|m| format!("x{m}")).collect(),
            precision_names: (0..q).map(|k| format!("q{k}")).collect(),
            school_ids: vec![Vec::new(); n_levels],
            year_labels: (1..=n_years as i64).collect(),
            level_labels: (1..=n_levels as i64).collect(),
        })
    }

    /// Direct constructor for already-assembled dense data (used by the
    /// simulator). Validates the open-interval invariant and vector lengths.
    #[allow(clippy::too_many_arguments)]
    pub fn from_dense(
        layout: PanelLayout,
        responses: Vec<f64>,
        mean_covariates: Vec<f64>,
        precision_covariates: Vec<f64>,
        mean_names: Vec<String>,
        precision_names: Vec<String>,
        school_ids: Vec<Vec<String>>,
        year_labels: Vec<i64>,
        level_labels: Vec<i64>,
    ) -> Result<Self> {
        let n = layout.n_obs();
        let p = mean_names.len();
        let q = precision_names.len();
        if responses.len() != n || mean_covariates.len() != n * p || precision_covariates.len() != n * q {
            return Err(Error::DimensionMismatch(format!(
                "dense table arrays do not match layout: n={n}, p={p}, q={q}"
            )));
        }
        if p == 0 || q == 0 {
            return Err(Error::InvalidData("need p >= 1 and q >= 1".into()));
        }
        for (k, &y) in responses.iter().enumerate() {
            if !(y > 0.0 && y < 1.0) {
                return Err(Error::InvalidData(format!(
                    "response {y} at flat position {k} is outside the open interval (0,1)"
                )));
            }
        }
        Ok(Self {
            layout,
            responses,
            mean_covariates,
            precision_covariates,
            p,
            q,
            mean_names,
            precision_names,
            school_ids,
            year_labels,
            level_labels,
        })
    }

    /// Re-emit the table as raw records (covariates as stored, intercept
    /// dropped). Useful to rebuild a table under a different model spec.
    pub fn to_records(&self) -> Vec<RawRecord> {
        let mut out = Vec::with_capacity(self.n_obs());
        for idx in self.layout.iter() {
            let mut covariates = BTreeMap::new();
            for (m, name) in self.mean_names.iter().enumerate().skip(1) {
                covariates.insert(name.clone(), self.mean_row(idx)[m]);
            }
            for (k, name) in self.precision_names.iter().enumerate().skip(1) {
                covariates.insert(name.clone(), self.precision_row(idx)[k]);
            }
            out.push(RawRecord {
                level: self.level_label(idx.level),
                school_id: self.school_id(idx.level, idx.school).to_string(),
                year: self.year_label(idx.year),
                response: self.response(idx),
                covariates,
            });
        }
        out
    }
}

/// z-score a covariate column: mean 0, sample (n-1) standard deviation 1.
pub fn covariate_standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::InvalidData(
            "cannot standardize fewer than 2 values".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::InvalidData(
            "covariate has zero variance; drop it or leave it raw".into(),
        ));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

struct DenseMaps {
    level_labels: Vec<i64>,
    year_labels: Vec<i64>,
    school_ids: Vec<Vec<String>>,
}

fn dense_maps(records: &[RawRecord]) -> DenseMaps {
    let mut levels: BTreeSet<i64> = BTreeSet::new();
    let mut years: BTreeSet<i64> = BTreeSet::new();
    for r in records {
        levels.insert(r.level);
        years.insert(r.year);
    }
    let level_labels: Vec<i64> = levels.into_iter().collect();
    let year_labels: Vec<i64> = years.into_iter().collect();
    let mut school_sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); level_labels.len()];
    for r in records {
        let li = level_labels.binary_search(&r.level).unwrap();
        school_sets[li].insert(r.school_id.clone());
    }
    DenseMaps {
        level_labels,
        year_labels,
        school_ids: school_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
    }
}

/// Assemble a balanced `ObservationTable` from records.
///
/// Covariates named by the spec are pulled out in spec order, the intercept
/// is prepended, and columns flagged `standardize` are z-scored over the
/// whole table (one global mean/sd pooled across levels and years).
pub fn build_table(records: &[RawRecord], spec: &ModelSpec) -> Result<ObservationTable> {
    if records.is_empty() {
        return Err(Error::InvalidData("no records".into()));
    }
    let maps = dense_maps(records);
    let n_years = maps.year_labels.len();
    let schools_per_level: Vec<usize> = maps.school_ids.iter().map(|s| s.len()).collect();
    let layout = PanelLayout::new(schools_per_level, n_years)?;
    let n = layout.n_obs();

    // Place records, checking for duplicates and bad responses.
    let mut seen = vec![false; n];
    let mut responses = vec![0.0; n];
    let mut placed: Vec<Option<&RawRecord>> = vec![None; n];
    for r in records {
        let level = maps.level_labels.binary_search(&r.level).unwrap() + 1;
        let year = maps.year_labels.binary_search(&r.year).unwrap() + 1;
        let school = maps.school_ids[level - 1]
            .binary_search(&r.school_id)
            .unwrap()
            + 1;
        let idx = PanelIndex { level, school, year };
        let o = layout.offset(idx);
        if seen[o] {
            return Err(Error::InvalidData(format!(
                "duplicate record for level={} school={} year={}",
                r.level, r.school_id, r.year
            )));
        }
        if !(r.response > 0.0 && r.response < 1.0) {
            return Err(Error::InvalidData(format!(
                "response {} for level={} school={} year={} is outside (0,1)",
                r.response, r.level, r.school_id, r.year
            )));
        }
        seen[o] = true;
        responses[o] = r.response;
        placed[o] = Some(r);
    }

    // Balance: every (level, school) for every year.
    for idx in layout.iter() {
        if !seen[layout.offset(idx)] {
            return Err(Error::InvalidData(format!(
                "unbalanced panel: missing observation for level={} school={} year={}",
                maps.level_labels[idx.level - 1],
                maps.school_ids[idx.level - 1][idx.school - 1],
                maps.year_labels[idx.year - 1]
            )));
        }
    }

    // Pull covariate columns in spec order.
    let pull = |name: &str| -> Result<Vec<f64>> {
        let mut col = Vec::with_capacity(n);
        for slot in &placed {
            let r = slot.expect("balanced panel slot");
            match r.covariates.get(name) {
                Some(&v) if v.is_finite() => col.push(v),
                Some(&v) => {
                    return Err(Error::InvalidData(format!(
                        "non-finite value {v} for covariate '{name}'"
                    )))
                }
                None => {
                    return Err(Error::InvalidData(format!(
                        "unknown covariate name '{name}' (not present in the records)"
                    )))
                }
            }
        }
        Ok(col)
    };

    let p = 1 + spec.mean_covariates.len();
    let q = 1 + spec.precision_covariates.len();
    let mut mean_cols: Vec<Vec<f64>> = Vec::with_capacity(p - 1);
    for c in &spec.mean_covariates {
        let col = pull(&c.name)?;
        mean_cols.push(if c.standardize { covariate_standardize(&col)? } else { col });
    }
    let mut prec_cols: Vec<Vec<f64>> = Vec::with_capacity(q - 1);
    for c in &spec.precision_covariates {
        let col = pull(&c.name)?;
        prec_cols.push(if c.standardize { covariate_standardize(&col)? } else { col });
    }

    let mut mean_covariates = vec![0.0; n * p];
    let mut precision_covariates = vec![0.0; n * q];
    for o in 0..n {
        mean_covariates[o * p] = 1.0;
        for (m, col) in mean_cols.iter().enumerate() {
            mean_covariates[o * p + 1 + m] = col[o];
        }
        precision_covariates[o * q] = 1.0;
        for (k, col) in prec_cols.iter().enumerate() {
            precision_covariates[o * q + 1 + k] = col[o];
        }
    }

    let mut mean_names = vec!["intercept".to_string()];
    mean_names.extend(spec.mean_covariates.iter().map(|c| c.name.clone()));
    let mut precision_names = vec!["intercept".to_string()];
    precision_names.extend(spec.precision_covariates.iter().map(|c| c.name.clone()));

    ObservationTable::from_dense(
        layout,
        responses,
        mean_covariates,
        precision_covariates,
        mean_names,
        precision_names,
        maps.school_ids,
        maps.year_labels,
        maps.level_labels,
    )
}

/// Assemble a balanced `RawScoreTable` from records whose `response` field
/// carries the raw score in [0, s_max].
pub fn build_raw_scores(records: &[RawRecord], s_max: f64) -> Result<RawScoreTable> {
    if records.is_empty() {
        return Err(Error::InvalidData("no records".into()));
    }
    let maps = dense_maps(records);
    let layout = PanelLayout::new(
        maps.school_ids.iter().map(|s| s.len()).collect(),
        maps.year_labels.len(),
    )?;
    let mut seen = vec![false; layout.n_obs()];
    let mut scores = vec![0.0; layout.n_obs()];
    for r in records {
        let level = maps.level_labels.binary_search(&r.level).unwrap() + 1;
        let year = maps.year_labels.binary_search(&r.year).unwrap() + 1;
        let school = maps.school_ids[level - 1]
            .binary_search(&r.school_id)
            .unwrap()
            + 1;
        let o = layout.offset(PanelIndex { level, school, year });
        if seen[o] {
            return Err(Error::InvalidData(format!(
                "duplicate record for level={} school={} year={}",
                r.level, r.school_id, r.year
            )));
        }
        seen[o] = true;
        scores[o] = r.response;
    }
    for idx in layout.iter() {
        if !seen[layout.offset(idx)] {
            return Err(Error::InvalidData(format!(
                "unbalanced panel: missing observation for level={} school={} year={}",
                maps.level_labels[idx.level - 1],
                maps.school_ids[idx.level - 1][idx.school - 1],
                maps.year_labels[idx.year - 1]
            )));
        }
    }
    RawScoreTable::new(
        layout,
        scores,
        s_max,
        maps.school_ids,
        maps.year_labels,
        maps.level_labels,
    )
}

/// Panel of raw bounded scores W in [0, s_max] prior to standardization.
#[derive(Debug, Clone)]
pub struct RawScoreTable {
    pub layout: PanelLayout,
    pub raw_scores: Vec<f64>,
    pub s_max: f64,
    pub school_ids: Vec<Vec<String>>,
    pub year_labels: Vec<i64>,
    pub level_labels: Vec<i64>,
}

impl RawScoreTable {
    pub fn new(
        layout: PanelLayout,
        raw_scores: Vec<f64>,
        s_max: f64,
        school_ids: Vec<Vec<String>>,
        year_labels: Vec<i64>,
        level_labels: Vec<i64>,
    ) -> Result<Self> {
        if !(s_max > 0.0) {
            return Err(Error::InvalidData("s_max must be positive".into()));
        }
        if raw_scores.len() != layout.n_obs() {
            return Err(Error::DimensionMismatch("raw score count != layout".into()));
        }
        for &w in &raw_scores {
            if !(0.0..=s_max).contains(&w) {
                return Err(Error::InvalidData(format!(
                    "raw score {w} outside [0, {s_max}]"
                )));
            }
        }
        Ok(Self {
            layout,
            raw_scores,
            s_max,
            school_ids,
            year_labels,
            level_labels,
        })
    }

    pub fn score(&self, idx: PanelIndex) -> f64 {
        self.raw_scores[self.layout.offset(idx)]
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion. One row per (level, school_id, year); header required;
// UTF-8, comma separated, '.' decimal point.
// ---------------------------------------------------------------------------

/// Parsed CSV panel: fixed id columns plus named numeric columns.
pub struct PanelCsv {
    pub records: Vec<RawRecord>,
    /// Covariate column names in file order (response column excluded).
    pub extra_columns: Vec<String>,
}

/// Read a panel CSV whose response lives in `value_column`. All remaining
/// non-id columns are exposed as covariates.
pub fn read_panel_csv<R: Read>(reader: R, value_column: &str) -> Result<PanelCsv> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rd.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidData(format!("missing required column '{name}'")))
    };
    let level_col = find("level")?;
    let school_col = find("school_id")?;
    let year_col = find("year")?;
    let value_col = find(value_column)?;
    let id_cols = [level_col, school_col, year_col, value_col];
    let extra: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !id_cols.contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let parse_f64 = |s: &str, what: &str, line: u64| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| {
            Error::InvalidData(format!("line {line}: cannot parse {what} value '{s}'"))
        })
    };
    let parse_i64 = |s: &str, what: &str, line: u64| -> Result<i64> {
        s.trim().parse::<i64>().map_err(|_| {
            Error::InvalidData(format!("line {line}: cannot parse {what} value '{s}'"))
        })
    };

    let mut records = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let mut covariates = BTreeMap::new();
        for (i, name) in &extra {
            covariates.insert(name.clone(), parse_f64(&rec[*i], name, line)?);
        }
        records.push(RawRecord {
            level: parse_i64(&rec[level_col], "level", line)?,
            school_id: rec[school_col].trim().to_string(),
            year: parse_i64(&rec[year_col], "year", line)?,
            response: parse_f64(&rec[value_col], value_column, line)?,
        covariates,
        });
    }
    Ok(PanelCsv {
        records,
        extra_columns: extra.into_iter().map(|(_, n)| n).collect(),
    })
}

/// Read a panel CSV from a path; the response column is `y`.
pub fn read_panel_csv_path(path: &Path) -> Result<PanelCsv> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    read_panel_csv(f, "y")
}

/// Write records to a panel CSV with the given value column name.
/// Values are emitted with 17 significant digits.
pub fn write_panel_csv<W: Write>(
    writer: W,
    records: &[RawRecord],
    value_column: &str,
    extra_columns: &[String],
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(writer);
    let mut header = vec!["level".to_string(), "school_id".to_string(), "year".to_string(), value_column.to_string()];
    header.extend(extra_columns.iter().cloned());
    wr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.level.to_string(),
            r.school_id.clone(),
            r.year.to_string(),
            format_g17(r.response),
        ];
        for name in extra_columns {
            let v = r.covariates.get(name).copied().ok_or_else(|| {
                Error::InvalidData(format!(
                    "record level={} school={} year={} lacks column '{name}'",
                    r.level, r.school_id, r.year
                ))
            })?;
            row.push(format_g17(v));
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Fixed 17-significant-digit numeric formatting used by all primary outputs.
pub fn format_g17(x: f64) -> String {
    format!("{x:.16e}")
}
