//! Synthetic panel generation from the full generative model, for
//! posterior-recovery tests, sampler validation and model-ordering
//! experiments.
//!
//! The alpha and gamma paths start at the scenario's fixed start vectors and
//! evolve as Gaussian random walks with the scenario's true variances;
//! beta_it and delta are drawn around them respecting the variant's tying;
//! covariates come from per-column generators; responses are drawn from the
//! observation family. The full ground-truth state is returned alongside
//! the table.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, PanelLayout};
use crate::error::{Error, Result};
use crate::model::{Family, ModelDims, ParameterState, PrecisionVariant};
use crate::rng::derive_rng;
use crate::special::logistic;

/// Distribution of one synthetic covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Constant { value: f64 },
    Binary { prob: f64 },
    StdNormal,
    /// Log-normal counts z-scored over the whole table (a student-count
    /// style precision covariate).
    LogNormalStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGen {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

/// Dimensions, true hyperparameters, covariate generators, variant and seed
/// for one synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub levels: usize,
    pub years: usize,
    pub schools_per_level: Vec<usize>,
    pub variant: PrecisionVariant,
    #[serde(default = "default_family")]
    pub family: Family,
    pub mean_covariates: Vec<CovariateGen>,
    pub precision_covariates: Vec<CovariateGen>,
    /// alpha_0 (the walk starts here exactly), length p.
    pub alpha_start: Vec<f64>,
    /// gamma_0 analogue, length q.
    pub gamma_start: Vec<f64>,
    /// True W_alpha diagonal, length p.
    pub w_alpha: Vec<f64>,
    /// True W_gamma diagonal, length q (used only when the variant has a
    /// gamma walk).
    pub w_gamma: Vec<f64>,
    /// True V_beta diagonals, levels x p.
    pub v_beta: Vec<Vec<f64>>,
    /// True V_delta diagonals at the variant's block granularity
    /// (levels x q for M3/M5, 1 x q for M4; unused for M1/M2).
    pub v_delta: Vec<Vec<f64>>,
    pub seed: u64,
}

fn default_family() -> Family {
    Family::Beta
}

impl SimulationScenario {
    pub fn p(&self) -> usize {
        1 + self.mean_covariates.len()
    }

    pub fn q(&self) -> usize {
        1 + self.precision_covariates.len()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_levels: self.levels,
            n_years: self.years,
            p: self.p(),
            q: self.q(),
            variant: self.variant,
            family: self.family,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.years == 0 {
            return Err(Error::InvalidConfig("need levels >= 1 and years >= 1".into()));
        }
        if self.schools_per_level.len() != self.levels {
            return Err(Error::InvalidConfig(
                "schools_per_level must have one entry per level".into(),
            ));
        }
        if self.schools_per_level.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("every level needs at least one school".into()));
        }
        let (p, q) = (self.p(), self.q());
        if self.alpha_start.len() != p || self.w_alpha.len() != p {
            return Err(Error::InvalidConfig(format!(
                "alpha_start and w_alpha must have length p = {p}"
            )));
        }
        if self.gamma_start.len() != q || self.w_gamma.len() != q {
            return Err(Error::InvalidConfig(format!(
                "gamma_start and w_gamma must have length q = {q}"
            )));
        }
        if self.v_beta.len() != self.levels || self.v_beta.iter().any(|v| v.len() != p) {
            return Err(Error::InvalidConfig("v_beta must be levels x p".into()));
        }
        let dims = self.dims();
        let need_blocks = dims.n_v_delta_blocks();
        if need_blocks > 0
            && (self.v_delta.len() < need_blocks || self.v_delta.iter().any(|v| v.len() != q))
        {
            return Err(Error::InvalidConfig(format!(
                "v_delta must provide {need_blocks} block(s) of length q = {q}"
            )));
        }
        let nonneg = |vs: &[f64]| vs.iter().all(|&v| v >= 0.0 && v.is_finite());
        if !nonneg(&self.w_alpha)
            || !nonneg(&self.w_gamma)
            || !self.v_beta.iter().all(|v| nonneg(v))
            || !self.v_delta.iter().all(|v| nonneg(v))
        {
            return Err(Error::InvalidConfig("true variances must be finite and >= 0".into()));
        }
        for g in self.mean_covariates.iter().chain(&self.precision_covariates) {
            if let CovariateKind::Binary { prob } = g.kind {
                if !(0.0..=1.0).contains(&prob) {
                    return Err(Error::InvalidConfig(format!(
                        "binary covariate '{}' needs prob in [0,1]",
                        g.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A scenario shaped like the production design: five mean covariates
/// (one rare binary, one standard-normal index, two common binaries, one
/// standard-normal share) and a log-normal count driving the precision.
pub fn paper_like_scenario(levels: usize, years: usize, schools: usize, seed: u64) -> SimulationScenario {
    SimulationScenario {
        levels,
        years,
        schools_per_level: vec![schools; levels],
        variant: PrecisionVariant::M5,
        family: Family::Beta,
        mean_covariates: vec![
            CovariateGen { name: "adm".into(), kind: CovariateKind::Binary { prob: 0.1 } },
            CovariateGen { name: "hdi".into(), kind: CovariateKind::StdNormal },
            CovariateGen { name: "lib".into(), kind: CovariateKind::Binary { prob: 0.7 } },
            CovariateGen { name: "lab".into(), kind: CovariateKind::Binary { prob: 0.7 } },
            CovariateGen { name: "boys".into(), kind: CovariateKind::StdNormal },
        ],
        precision_covariates: vec![CovariateGen {
            name: "nstudent".into(),
            kind: CovariateKind::LogNormalStd,
        }],
        alpha_start: vec![-1.2, 0.9, 0.35, 0.1, 0.1, 0.15],
        gamma_start: vec![-3.2, -0.3],
        w_alpha: vec![0.01; 6],
        w_gamma: vec![0.01; 2],
        v_beta: vec![vec![0.05; 6]; levels],
        v_delta: vec![vec![0.05; 2]; levels],
        seed,
    }
}

fn draw_column<R: Rng + ?Sized>(kind: &CovariateKind, n: usize, rng: &mut R) -> Vec<f64> {
    match kind {
        CovariateKind::Constant { value } => vec![*value; n],
        CovariateKind::Binary { prob } => (0..n)
            .map(|_| if rng.random::<f64>() < *prob { 1.0 } else { 0.0 })
            .collect(),
        CovariateKind::StdNormal => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        CovariateKind::LogNormalStd => {
            let raw: Vec<f64> = (0..n)
                .map(|_| (rng.sample::<f64, _>(StandardNormal)).exp())
                .collect();
            crate::data::covariate_standardize(&raw).unwrap_or(raw)
        }
    }
}

fn walk<R: Rng + ?Sized>(start: &[f64], variances: &[f64], steps: usize, rng: &mut R) -> Vec<f64> {
    // Returns the path including the root: (steps+1) x dim, flattened.
    let dim = start.len();
    let mut path = Vec::with_capacity((steps + 1) * dim);
    path.extend_from_slice(start);
    for t in 1..=steps {
        for m in 0..dim {
            let prev = path[(t - 1) * dim + m];
            let eps: f64 = rng.sample(StandardNormal);
            path.push(prev + variances[m].sqrt() * eps);
        }
    }
    path
}

/// Generate a synthetic panel plus the ground-truth parameter state.
pub fn simulate_panel(scenario: &SimulationScenario) -> Result<(ObservationTable, ParameterState)> {
    scenario.validate()?;
    let dims = scenario.dims();
    let (p, q) = (dims.p, dims.q);
    let layout = PanelLayout::new(scenario.schools_per_level.clone(), scenario.years)?;
    let n = layout.n_obs();
    let mut rng = derive_rng(scenario.seed, "simulate", 0);

    // Hierarchical coefficient layer.
    let mut truth = ParameterState::init(&dims, &crate::model::PriorSpec::default());
    truth.alpha = walk(&scenario.alpha_start, &scenario.w_alpha, scenario.years, &mut rng);
    for i0 in 0..dims.n_levels {
        for t0 in 0..dims.n_years {
            for m in 0..p {
                let eps: f64 = rng.sample(StandardNormal);
                truth.beta[(i0 * dims.n_years + t0) * p + m] =
                    truth.alpha[(t0 + 1) * p + m] + scenario.v_beta[i0][m].sqrt() * eps;
            }
        }
    }
    match scenario.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => {
            // Single tied unit, fixed at the start vector (no walk exists).
            truth.delta_unit_mut(&dims, 0).copy_from_slice(&scenario.gamma_start[..q]);
        }
        PrecisionVariant::M3 => {
            truth.gamma.copy_from_slice(&scenario.gamma_start[..q]);
            for i0 in 0..dims.n_levels {
                for k in 0..q {
                    let eps: f64 = rng.sample(StandardNormal);
                    truth.delta[i0 * q + k] =
                        scenario.gamma_start[k] + scenario.v_delta[i0][k].sqrt() * eps;
                }
            }
        }
        PrecisionVariant::M4 => {
            truth.gamma = walk(&scenario.gamma_start, &scenario.w_gamma, scenario.years, &mut rng);
            for t0 in 0..dims.n_years {
                for k in 0..q {
                    let eps: f64 = rng.sample(StandardNormal);
                    truth.delta[t0 * q + k] =
                        truth.gamma[(t0 + 1) * q + k] + scenario.v_delta[0][k].sqrt() * eps;
                }
            }
        }
        PrecisionVariant::M5 => {
            truth.gamma = walk(&scenario.gamma_start, &scenario.w_gamma, scenario.years, &mut rng);
            for i0 in 0..dims.n_levels {
                for t0 in 0..dims.n_years {
                    for k in 0..q {
                        let eps: f64 = rng.sample(StandardNormal);
                        truth.delta[(i0 * dims.n_years + t0) * q + k] =
                            truth.gamma[(t0 + 1) * q + k] + scenario.v_delta[i0][k].sqrt() * eps;
                    }
                }
            }
        }
    }
    // Record the true variance hyperparameters in the truth state (floored
    // away from zero so the state stays valid for density evaluations).
    for i0 in 0..dims.n_levels {
        for m in 0..p {
            truth.v_beta[i0 * p + m] = scenario.v_beta[i0][m].max(1e-12);
        }
    }
    for m in 0..p {
        truth.w_alpha[m] = scenario.w_alpha[m].max(1e-12);
    }
    for b in 0..dims.n_v_delta_blocks() {
        for k in 0..q {
            truth.v_delta[b * q + k] = scenario.v_delta[b][k].max(1e-12);
        }
    }
    if dims.has_gamma_walk() {
        for k in 0..q {
            truth.w_gamma[k] = scenario.w_gamma[k].max(1e-12);
        }
    }

    // Covariates, column by column, in canonical observation order.
    let mean_cols: Vec<Vec<f64>> = scenario
        .mean_covariates
        .iter()
        .map(|g| draw_column(&g.kind, n, &mut rng))
        .collect();
    let prec_cols: Vec<Vec<f64>> = scenario
        .precision_covariates
        .iter()
        .map(|g| draw_column(&g.kind, n, &mut rng))
        .collect();

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

    // Responses.
    let mut responses = vec![0.0; n];
    for (o, idx) in layout.iter().enumerate() {
        let i0 = idx.level - 1;
        let t0 = idx.year - 1;
        let beta = truth.beta_block(&dims, i0, t0);
        let delta = truth.delta_for(&dims, i0, t0);
        let x = &mean_covariates[o * p..(o + 1) * p];
        let qq = &precision_covariates[o * q..(o + 1) * q];
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let zeta: f64 = qq.iter().zip(delta).map(|(a, b)| a * b).sum();
        let y = match scenario.family {
            Family::Beta => {
                let mu = logistic(eta).clamp(1e-12, 1.0 - 1e-12);
                let phi = (-zeta).exp();
                let dist = BetaDist::new(mu * phi, (1.0 - mu) * phi).map_err(|e| {
                    Error::Numerical(format!(
                        "invalid beta parameters mu={mu}, phi={phi} at flat position {o}: {e}"
                    ))
                })?;
                dist.sample(&mut rng)
            }
            Family::NormalLogit => {
                let phi = zeta.exp();
                let eps: f64 = rng.sample(StandardNormal);
                logistic(eta + eps / phi.sqrt())
            }
        };
        responses[o] = y.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    }

    let mut mean_names = vec!["intercept".to_string()];
    mean_names.extend(scenario.mean_covariates.iter().map(|g| g.name.clone()));
    let mut precision_names = vec!["intercept".to_string()];
    precision_names.extend(scenario.precision_covariates.iter().map(|g| g.name.clone()));
    let school_ids: Vec<Vec<String>> = scenario
        .schools_per_level
        .iter()
        .enumerate()
        .map(|(i0, &ns)| (1..=ns).map(|j| format!("L{}S{j:04}", i0 + 1)).collect())
        .collect();

    let table = ObservationTable::from_dense(
        layout,
        responses,
        mean_covariates,
        precision_covariates,
        mean_names,
        precision_names,
        school_ids,
        (1..=scenario.years as i64).collect(),
        (1..=scenario.levels as i64).collect(),
    )?;
    Ok((table, truth))
}
