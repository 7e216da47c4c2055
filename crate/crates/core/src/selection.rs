//! Model comparison: DIC from the stored deviances, posterior predictive
//! replication, the ranked probability score, the logarithmic score, and
//! per-observation predictive summaries.
//!
//! DIC = Dbar + p_D with p_D = Dbar - D(theta_bar) (Spiegelhalter et al.,
//! 2002). RPS(y) = E|Y - y| - E|Y - Y'|/2 estimated by pairing two
//! independent posterior-predictive replicate streams; LogS averages
//! -log p(y) with the predictive density evaluated as an equally weighted
//! mixture over the stored draws via log-sum-exp. Smaller is better for all
//! three.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::mcmc::ChainOutput;
use crate::model::{
    log_likelihood_on, obs_logdensity, DensityScale, Family, ModelDims, ModelSpec, ParameterState,
};
use crate::rng::derive_rng;
use crate::special::{log_sum_exp, logistic};

/// DIC and its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicSummary {
    pub d_bar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

impl DicSummary {
    /// Build from the two deviance summaries; the identity
    /// p_D = Dbar - D(theta_bar), DIC = Dbar + p_D is recomputed here and
    /// nowhere else.
    pub fn from_deviances(d_bar: f64, d_at_mean: f64) -> Self {
        let p_d = d_bar - d_at_mean;
        Self { d_bar, d_at_mean, p_d, dic: d_bar + p_d }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model_label: String,
    pub d_bar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
    pub rps: f64,
    pub logs: f64,
}

impl ScoreReport {
    pub fn new(model_label: String, dic: DicSummary, rps: f64, logs: f64) -> Self {
        Self {
            model_label,
            d_bar: dic.d_bar,
            d_at_mean: dic.d_at_mean,
            p_d: dic.p_d,
            dic: dic.dic,
            rps,
            logs,
        }
    }
}

/// Componentwise posterior mean of the stored draws. Location parameters
/// average on their own scale; variance entries average on the log scale
/// (then exponentiate), since their posteriors are strongly skewed.
pub fn posterior_mean_state(draws: &[ParameterState]) -> Result<ParameterState> {
    let first = draws
        .first()
        .ok_or_else(|| Error::InvalidConfig("no draws to average".into()))?;
    let l = draws.len() as f64;
    let mut mean = first.clone();
    let avg = |get: fn(&ParameterState) -> &Vec<f64>, out: &mut Vec<f64>| {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = draws.iter().map(|d| get(d)[k]).sum::<f64>() / l;
        }
    };
    let avg_log = |get: fn(&ParameterState) -> &Vec<f64>, out: &mut Vec<f64>| {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = (draws.iter().map(|d| get(d)[k].ln()).sum::<f64>() / l).exp();
        }
    };
    avg(|d| &d.beta, &mut mean.beta);
    avg(|d| &d.alpha, &mut mean.alpha);
    avg(|d| &d.delta, &mut mean.delta);
    avg(|d| &d.gamma, &mut mean.gamma);
    avg_log(|d| &d.v_beta, &mut mean.v_beta);
    avg_log(|d| &d.w_alpha, &mut mean.w_alpha);
    avg_log(|d| &d.v_delta, &mut mean.v_delta);
    avg_log(|d| &d.w_gamma, &mut mean.w_gamma);
    Ok(mean)
}

/// DIC on the response scale, reusing the deviances stored with the chain.
pub fn dic(output: &ChainOutput, table: &ObservationTable, spec: &ModelSpec) -> Result<DicSummary> {
    dic_on(output, table, spec, DensityScale::Response)
}

/// DIC on an explicit reporting scale (the logit scale recomputes the
/// per-draw deviances; only meaningful for the normal baseline).
pub fn dic_on(
    output: &ChainOutput,
    table: &ObservationTable,
    spec: &ModelSpec,
    scale: DensityScale,
) -> Result<DicSummary> {
    if output.len() < 2 {
        return Err(Error::InvalidConfig("DIC needs at least 2 stored draws".into()));
    }
    let deviances: Vec<f64> = match scale {
        DensityScale::Response => output.deviances.clone(),
        DensityScale::Logit => {
            let mut d = Vec::with_capacity(output.len());
            for draw in &output.draws {
                d.push(-2.0 * log_likelihood_on(table, draw, spec, scale)?);
            }
            d
        }
    };
    let d_bar = deviances.iter().sum::<f64>() / deviances.len() as f64;
    let mean_state = posterior_mean_state(&output.draws)?;
    let d_at_mean = -2.0 * log_likelihood_on(table, &mean_state, spec, scale)?;
    Ok(DicSummary::from_deviances(d_bar, d_at_mean))
}

/// Posterior predictive replicates, observation-major: for each observation
/// the replicates of all stored draws are contiguous
/// (`reps_per_obs = draws * reps_per_draw`).
#[derive(Debug, Clone)]
pub struct ReplicateStore {
    pub n_obs: usize,
    pub reps_per_obs: usize,
    values: Vec<f64>,
}

impl ReplicateStore {
    pub fn replicates(&self, obs: usize) -> &[f64] {
        &self.values[obs * self.reps_per_obs..(obs + 1) * self.reps_per_obs]
    }

    /// Elementwise-transformed copy (e.g. through the logit, for scoring a
    /// normal-baseline fit on the linear-predictor scale).
    pub fn transformed(&self, f: impl Fn(f64) -> f64) -> ReplicateStore {
        ReplicateStore {
            n_obs: self.n_obs,
            reps_per_obs: self.reps_per_obs,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Simulate posterior predictive replicates. The RNG stream of each
/// observation is derived from (seed, stream label, observation index), so
/// the store is reproducible and independent of scheduling; two different
/// `stream` labels give the independent replicate sets the RPS pairing
/// needs. The normal baseline simulates on the logit scale and
/// back-transforms through the logistic.
pub fn replicate(
    output: &ChainOutput,
    table: &ObservationTable,
    spec: &ModelSpec,
    reps_per_draw: usize,
    seed: u64,
    stream: &str,
) -> Result<ReplicateStore> {
    if output.is_empty() {
        return Err(Error::InvalidConfig("no stored draws to replicate from".into()));
    }
    if reps_per_draw == 0 {
        return Err(Error::InvalidConfig("reps_per_draw must be >= 1".into()));
    }
    let dims = ModelDims::new(spec, table)?;
    let n_obs = table.n_obs();
    let reps_per_obs = output.len() * reps_per_draw;
    let mut values = vec![0.0; n_obs * reps_per_obs];
    let label = format!("replicate/{stream}");
    for (o, idx) in table.layout().iter().enumerate() {
        let mut rng = derive_rng(seed, &label, o as u64);
        let x = table.mean_row(idx);
        let qv = table.precision_row(idx);
        let i0 = idx.level - 1;
        let t0 = idx.year - 1;
        let slot = &mut values[o * reps_per_obs..(o + 1) * reps_per_obs];
        let mut w = 0;
        for draw in &output.draws {
            let beta = draw.beta_block(&dims, i0, t0);
            let delta = draw.delta_for(&dims, i0, t0);
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let zeta: f64 = qv.iter().zip(delta).map(|(a, b)| a * b).sum();
            match dims.family {
                Family::Beta => {
                    let mu = logistic(eta).clamp(1e-12, 1.0 - 1e-12);
                    let phi = (-zeta).exp();
                    let dist = BetaDist::new(mu * phi, (1.0 - mu) * phi).map_err(|e| {
                        Error::Numerical(format!(
                            "invalid predictive beta parameters mu={mu} phi={phi}: {e}"
                        ))
                    })?;
                    for _ in 0..reps_per_draw {
                        let y: f64 = dist.sample(&mut rng);
                        slot[w] = y.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                        w += 1;
                    }
                }
                Family::NormalLogit => {
                    let phi = zeta.exp();
                    let sd = (1.0 / phi).sqrt();
                    for _ in 0..reps_per_draw {
                        let eps: f64 = rng.sample(StandardNormal);
                        let y = logistic(eta + sd * eps);
                        slot[w] = y.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                        w += 1;
                    }
                }
            }
        }
    }
    Ok(ReplicateStore { n_obs, reps_per_obs, values })
}

/// Ranked probability score from two independent replicate streams.
///
/// Per observation: mean_k |a_k - y| - mean_k |a_k - b_k| / 2, pairing the
/// k-th replicate of the first stream with the k-th of the second; the final
/// score averages over observations.
pub fn rps(rep_a: &ReplicateStore, rep_b: &ReplicateStore, observed: &[f64]) -> Result<f64> {
    if rep_a.n_obs != observed.len() || rep_b.n_obs != observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "replicate stores cover {} and {} observations, observed has {}",
            rep_a.n_obs,
            rep_b.n_obs,
            observed.len()
        )));
    }
    if rep_a.reps_per_obs != rep_b.reps_per_obs {
        return Err(Error::DimensionMismatch(
            "the two replicate streams must have equal replicate counts".into(),
        ));
    }
    if rep_a.reps_per_obs < 2 {
        return Err(Error::InvalidConfig(
            "RPS needs at least 2 replicates per observation".into(),
        ));
    }
    let r = rep_a.reps_per_obs as f64;
    let mut total = 0.0;
    for (o, &y) in observed.iter().enumerate() {
        let a = rep_a.replicates(o);
        let b = rep_b.replicates(o);
        let term1: f64 = a.iter().map(|v| (v - y).abs()).sum::<f64>() / r;
        let term2: f64 = a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>() / r;
        total += term1 - 0.5 * term2;
    }
    Ok(total / observed.len() as f64)
}

/// Logarithmic score: average over observations of -log p(y), with the
/// predictive density the equal-weight mixture over stored draws, evaluated
/// through log-sum-exp.
pub fn logs(output: &ChainOutput, table: &ObservationTable, spec: &ModelSpec) -> Result<f64> {
    logs_on(output, table, spec, DensityScale::Response)
}

/// `logs` with an explicit reporting scale for the normal baseline.
pub fn logs_on(
    output: &ChainOutput,
    table: &ObservationTable,
    spec: &ModelSpec,
    scale: DensityScale,
) -> Result<f64> {
    if output.is_empty() {
        return Err(Error::InvalidConfig("no stored draws".into()));
    }
    let dims = ModelDims::new(spec, table)?;
    let ln_l = (output.len() as f64).ln();
    let mut total = 0.0;
    let mut terms = vec![0.0; output.len()];
    for idx in table.layout().iter() {
        let i0 = idx.level - 1;
        let t0 = idx.year - 1;
        let y = table.response(idx);
        let x = table.mean_row(idx);
        let qv = table.precision_row(idx);
        for (l, draw) in output.draws.iter().enumerate() {
            terms[l] = obs_logdensity(
                y,
                x,
                qv,
                draw.beta_block(&dims, i0, t0),
                draw.delta_for(&dims, i0, t0),
                dims.family,
                scale,
            );
        }
        total += -(log_sum_exp(&terms) - ln_l);
    }
    Ok(total / table.n_obs() as f64)
}

/// Per-observation predictive summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    pub level: i64,
    pub school_id: String,
    pub year: i64,
    pub observed: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Observed value falls outside the 95% predictive band.
    pub outside_band: bool,
}

/// Empirical type-7 quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi.min(sorted.len() - 1)] * frac
}

/// Predictive mean and central 95% band per observation, paired with the
/// observed value. Needs at least 40 replicates per observation for the
/// tail quantiles to be meaningful.
pub fn predictive_summary(
    replicates: &ReplicateStore,
    table: &ObservationTable,
) -> Result<Vec<PredictiveRow>> {
    if replicates.n_obs != table.n_obs() {
        return Err(Error::DimensionMismatch(
            "replicate store does not match the table".into(),
        ));
    }
    if replicates.reps_per_obs < 40 {
        return Err(Error::InvalidConfig(format!(
            "predictive summaries need >= 40 replicates per observation, got {}",
            replicates.reps_per_obs
        )));
    }
    let mut rows = Vec::with_capacity(table.n_obs());
    let mut buf = vec![0.0; replicates.reps_per_obs];
    for (o, idx) in table.layout().iter().enumerate() {
        buf.copy_from_slice(replicates.replicates(o));
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = buf.iter().sum::<f64>() / buf.len() as f64;
        let lower = quantile_sorted(&buf, 0.025);
        let upper = quantile_sorted(&buf, 0.975);
        let observed = table.response(idx);
        rows.push(PredictiveRow {
            level: table.level_label(idx.level),
            school_id: table.school_id(idx.level, idx.school).to_string(),
            year: table.year_label(idx.year),
            observed,
            mean,
            lower,
            upper,
            outside_band: observed < lower || observed > upper,
        });
    }
    Ok(rows)
}

/// Observed responses in canonical (flat) order, the order `ReplicateStore`
/// uses.
pub fn observed_vector(table: &ObservationTable) -> Vec<f64> {
    table.layout().iter().map(|idx| table.response(idx)).collect()
}
