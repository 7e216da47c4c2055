//! Convergence diagnostics over stored chains: effective sample size via
//! the initial-positive-sequence autocorrelation estimator (Geyer, 1992),
//! Geweke's window z-score, and the Gelman-Rubin potential scale reduction
//! factor across chains.

use crate::error::{Error, Result};
use crate::mcmc::ChainOutput;
use crate::model::ModelDims;
use crate::store;

/// Per-scalar-parameter diagnostics. `ess` is `None` when the series is
/// degenerate (zero variance); `psrf` is `None` with fewer than two chains.
#[derive(Debug, Clone)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: Option<f64>,
    pub geweke_z: Option<f64>,
    pub psrf: Option<f64>,
}

fn mean_var(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Effective sample size n / tau, with tau = 2 * sum_m Gamma_m - 1 over the
/// initial sequence of positive autocorrelation pair sums
/// Gamma_m = rho_{2m} + rho_{2m+1}. Returns None for a degenerate series.
pub fn ess(series: &[f64]) -> Option<f64> {
    let n = series.len();
    if n < 4 {
        return None;
    }
    let (mean, var) = mean_var(series);
    if !(var > 0.0) || !var.is_finite() {
        return None;
    }
    let gamma0: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let rho = |k: usize| -> f64 {
        let mut g = 0.0;
        for t in 0..(n - k) {
            g += (series[t] - mean) * (series[t + k] - mean);
        }
        g / n as f64 / gamma0
    };
    let mut sum_pairs = 0.0;
    let mut m = 0usize;
    loop {
        let k0 = 2 * m;
        let k1 = 2 * m + 1;
        if k1 >= n {
            break;
        }
        let pair = if m == 0 { 1.0 + rho(1) } else { rho(k0) + rho(k1) };
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        m += 1;
    }
    let tau = (2.0 * sum_pairs - 1.0).max(1e-12);
    Some(n as f64 / tau)
}

/// Geweke z-score comparing the first 10% of the series with the last 50%.
pub fn geweke_z(series: &[f64]) -> Option<f64> {
    let n = series.len();
    if n < 20 {
        return None;
    }
    let n_a = (n as f64 * 0.1).ceil() as usize;
    let n_b = n / 2;
    let (mean_a, var_a) = mean_var(&series[..n_a]);
    let (mean_b, var_b) = mean_var(&series[n - n_b..]);
    let denom = var_a / n_a as f64 + var_b / n_b as f64;
    if !(denom > 0.0) {
        return None;
    }
    Some((mean_a - mean_b) / denom.sqrt())
}

/// Gelman-Rubin potential scale reduction factor across chains.
pub fn psrf(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    if m < 2 {
        return None;
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return None;
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let grand = stats.iter().map(|(mu, _)| mu).sum::<f64>() / m as f64;
    let b = n as f64 / (m as f64 - 1.0)
        * stats.iter().map(|(mu, _)| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = stats.iter().map(|(_, v)| v).sum::<f64>() / m as f64;
    if !(w > 0.0) {
        return None;
    }
    let var_hat = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Some((var_hat / w).sqrt())
}

/// Diagnostics for every scalar parameter of a fit. Uses all chains: ESS is
/// summed across chains, the Geweke score comes from the first chain, and
/// PSRF is reported when at least two chains are available.
pub fn diagnostics(outputs: &[ChainOutput], dims: &ModelDims) -> Result<Vec<ParamDiagnostics>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::InvalidConfig("no chains supplied".into()))?;
    if first.len() < 10 {
        return Err(Error::InvalidConfig(format!(
            "diagnostics need at least 10 stored draws per chain, got {}",
            first.len()
        )));
    }
    let names = store::param_names(dims);
    // chain -> draw -> flat parameter vector
    let flat: Vec<Vec<Vec<f64>>> = outputs
        .iter()
        .map(|o| o.draws.iter().map(|d| store::flatten_state(d, dims)).collect())
        .collect();

    let mut report = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let per_chain: Vec<Vec<f64>> = flat
            .iter()
            .map(|chain| chain.iter().map(|draw| draw[k]).collect())
            .collect();
        let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let (mean, var) = mean_var(&pooled);
        let ess_total = per_chain
            .iter()
            .map(|c| ess(c))
            .try_fold(0.0, |acc, e| e.map(|v| acc + v));
        report.push(ParamDiagnostics {
            name: name.clone(),
            mean,
            sd: var.max(0.0).sqrt(),
            ess: ess_total,
            geweke_z: geweke_z(&per_chain[0]),
            psrf: psrf(&per_chain),
        });
    }
    Ok(report)
}
