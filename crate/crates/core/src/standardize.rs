//! Standardization of raw bounded scores into (0,1)-valued responses.
//!
//! Raw scores W live in [0, s_max]. Within each (level, year) cell the score
//! is centered and scaled, then mapped to (0,1) through the cell's
//! theoretical bounds:
//!
//! ```text
//! Z = (W - Wbar_it) / S_it
//! lo = (0 - Wbar_it) / S_it,   hi = (s_max - Wbar_it) / S_it
//! Y = (Z - lo) / (hi - lo)
//! ```
//!
//! Algebraically the centering cancels and Y = W / s_max; the four-step
//! pipeline is kept (and regression-tested against the collapse) because the
//! per-cell statistics are part of the audited output.
//!
//! Exact 0/1 hits are pulled into the open interval by shrinking toward 1/2
//! with the cell size n: y -> (y (n-1) + 0.5) / n. The shrink is applied to
//! the whole (level, year) cell whenever that cell contains a boundary hit;
//! applying it only to the hits themselves could reorder a boundary school
//! past an interior one (an interior y above 1 - 0.5/n would overtake a
//! nudged ceiling hit), and the map is strictly monotone so cell-wide use
//! preserves the within-cell ranking exactly. Cells without hits are
//! returned untouched.

use serde::{Deserialize, Serialize};

use crate::data::{PanelIndex, RawScoreTable};
use crate::error::{Error, Result};

/// Per-(level, year) centering statistics and standardized bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub level: usize,
    pub year: usize,
    /// Cell mean of the raw scores.
    pub mean: f64,
    /// Sample (n-1) standard deviation of the raw scores.
    pub sd: f64,
    /// Standardized position of the score floor 0.
    pub lo: f64,
    /// Standardized position of the score ceiling s_max.
    pub hi: f64,
    /// Schools in the cell.
    pub n: usize,
}

/// Statistics for every (level, year) cell, in (level, year) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationSummary {
    pub s_max: f64,
    pub cells: Vec<CellStats>,
}

impl StandardizationSummary {
    pub fn cell(&self, level: usize, year: usize) -> Option<&CellStats> {
        self.cells.iter().find(|c| c.level == level && c.year == year)
    }
}

/// Shrink a boundary value toward 1/2: (y*(n-1) + 0.5) / n.
///
/// Strictly inside (0,1) for any y in [0,1] and n >= 1, monotone in y, and
/// the identity at y = 1/2.
pub fn boundary_nudge(y: f64, group_size: usize) -> f64 {
    debug_assert!(group_size >= 1);
    let n = group_size as f64;
    (y * (n - 1.0) + 0.5) / n
}

/// Standardize a raw-score panel into (0,1) responses plus the per-cell
/// summary. Responses come back in the layout's canonical flat order.
///
/// Every (level, year) cell needs at least two schools and nonzero score
/// variance.
pub fn standardize_scores(raw: &RawScoreTable) -> Result<(Vec<f64>, StandardizationSummary)> {
    let layout = &raw.layout;
    let s_max = raw.s_max;
    let mut responses = vec![0.0; layout.n_obs()];
    let mut cells = Vec::with_capacity(layout.n_levels() * layout.n_years());

    for level in 1..=layout.n_levels() {
        let n = layout.n_schools(level);
        if n < 2 {
            return Err(Error::InvalidData(format!(
                "level {level} has {n} school(s); standardization needs at least 2 per (level, year) cell"
            )));
        }
        for year in 1..=layout.n_years() {
            let scores: Vec<f64> = (1..=n)
                .map(|school| raw.score(PanelIndex { level, school, year }))
                .collect();
            let mean = scores.iter().sum::<f64>() / n as f64;
            let ss: f64 = scores.iter().map(|w| (w - mean) * (w - mean)).sum();
            let sd = (ss / (n as f64 - 1.0)).sqrt();
            if sd == 0.0 {
                return Err(Error::InvalidData(format!(
                    "zero score variance in cell (level {level}, year {year})"
                )));
            }
            let lo = (0.0 - mean) / sd;
            let hi = (s_max - mean) / sd;
            let raw: Vec<f64> = scores
                .iter()
                .map(|&w| {
                    let z = (w - mean) / sd;
                    ((z - lo) / (hi - lo)).clamp(0.0, 1.0)
                })
                .collect();
            let has_boundary_hit = raw.iter().any(|&y| y <= 0.0 || y >= 1.0);
            for (school, &y) in (1..=n).zip(&raw) {
                let y = if has_boundary_hit { boundary_nudge(y, n) } else { y };
                responses[layout.offset(PanelIndex { level, school, year })] = y;
            }
            cells.push(CellStats { level, year, mean, sd, lo, hi, n });
        }
    }
    Ok((responses, StandardizationSummary { s_max, cells }))
}
