//! Metropolis-within-Gibbs sampler for the full posterior.
//!
//! Per sweep: (1) random-walk MH update of every beta_it block; (2) exact
//! Gibbs draws of the alpha path (the walk root alpha_0 included as an extra
//! Gaussian node); (3) MH update of every delta unit at the variant's tying
//! granularity; (4) Gibbs draws of gamma where the layer is sampled (static
//! for M3, a walk for M4/M5; fixed equal to the shared delta for M1/M2);
//! (5) conjugate inverse-gamma Gibbs draws of all variance blocks.
//!
//! Proposal scales adapt toward a dimension-dependent target acceptance rate
//! during burn-in (Robbins-Monro on the log scale) and are frozen afterwards
//! so the post-burn-in kernel leaves the posterior invariant. Everything is
//! a deterministic function of the seed.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, PanelIndex};
use crate::error::{Error, Result};
use crate::model::{
    log_likelihood, normal_logpdf_var, obs_logdensity, DensityScale, ModelDims, ModelSpec,
    ParameterState, PrecisionVariant, PriorSpec,
};
use crate::rng::derive_rng;

/// Run-length and tuning settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: u32,
    #[serde(default = "default_adapt_window")]
    pub adapt_window: u64,
    /// Uniform target acceptance rate; when absent each block targets the
    /// dimension rule (0.44 scalar, 0.234 for dimension >= 5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accept: Option<f64>,
    /// Initialize coefficients and variance prior means from independent
    /// per-(level, year) maximum-likelihood fits.
    #[serde(default)]
    pub warm_start: bool,
    /// Emit a heartbeat line to stderr every 1000 iterations.
    #[serde(default)]
    pub progress: bool,
}

fn default_iterations() -> u64 {
    35_000
}
fn default_burn_in() -> u64 {
    5_000
}
fn default_thin() -> u64 {
    30
}
fn default_chains() -> u32 {
    1
}
fn default_adapt_window() -> u64 {
    100
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            seed: 0,
            chains: default_chains(),
            adapt_window: default_adapt_window(),
            target_accept: None,
            warm_start: false,
            progress: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be >= 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be >= 1".into()));
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidConfig("adapt_window must be >= 1".into()));
        }
        if let Some(t) = self.target_accept {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "target_accept must lie in (0,1), got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Number of draws kept per chain: floor((iterations - burn_in) / thin).
    pub fn stored_draws(&self) -> u64 {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Acceptance bookkeeping for one MH block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub name: String,
    pub dim: usize,
    /// Post-burn-in acceptance rate (the frozen kernel).
    pub acceptance_rate: f64,
    /// Final per-component proposal standard deviation.
    pub proposal_scale: f64,
}

/// Thinned stored draws plus per-draw fit summaries and tuning metadata.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub chain_index: u32,
    pub draws: Vec<ParameterState>,
    pub log_likelihoods: Vec<f64>,
    /// D(theta) = -2 log f(y | theta) per stored draw.
    pub deviances: Vec<f64>,
    pub blocks: Vec<BlockDiagnostics>,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Pool several chains into one draw set (for scoring). Blocks keep the
    /// first chain's tuning metadata.
    pub fn merge(outputs: &[ChainOutput]) -> Result<ChainOutput> {
        let first = outputs
            .first()
            .ok_or_else(|| Error::InvalidConfig("no chains to merge".into()))?;
        let mut merged = ChainOutput {
            chain_index: first.chain_index,
            draws: Vec::new(),
            log_likelihoods: Vec::new(),
            deviances: Vec::new(),
            blocks: first.blocks.clone(),
        };
        for o in outputs {
            merged.draws.extend(o.draws.iter().cloned());
            merged.log_likelihoods.extend_from_slice(&o.log_likelihoods);
            merged.deviances.extend_from_slice(&o.deviances);
        }
        Ok(merged)
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// One random-walk Metropolis update of a parameter block.
///
/// Proposes `current + scale (.) eps` with independent standard-normal steps
/// per component and accepts the whole block with probability
/// min(1, exp(delta logpost)), computed in log space.
pub fn mh_update_block<F, R>(
    current: &[f64],
    mut logpost: F,
    scale: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, bool)>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if current.len() != scale.len() {
        return Err(Error::DimensionMismatch(format!(
            "mh_update_block: block has dim {}, scale has dim {}",
            current.len(),
            scale.len()
        )));
    }
    let lp_current = logpost(current);
    if !lp_current.is_finite() {
        return Err(Error::Numerical(format!(
            "mh_update_block: log posterior at the current point is {lp_current}"
        )));
    }
    let mut candidate = current.to_vec();
    for (c, &s) in candidate.iter_mut().zip(scale) {
        let eps: f64 = rng.sample(StandardNormal);
        *c += s * eps;
    }
    let lp_candidate = logpost(&candidate);
    let log_u = rng.random::<f64>().ln();
    if log_u < lp_candidate - lp_current {
        Ok((candidate, true))
    } else {
        Ok((current.to_vec(), false))
    }
}

/// Parameters of the inverse-gamma full conditional IG(a + n/2, b + SS/2)
/// for a variance governing the given Gaussian deviations.
pub fn ig_conditional(shape: f64, rate: f64, deviations: &[f64]) -> (f64, f64) {
    let ss: f64 = deviations.iter().map(|d| d * d).sum();
    (shape + deviations.len() as f64 / 2.0, rate + 0.5 * ss)
}

fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    // X ~ IG(a, b)  <=>  1/X ~ Gamma(a, rate b), i.e. Gamma(shape=a, scale=1/b).
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    let draw: f64 = g.sample(rng);
    (1.0 / draw).clamp(1e-300, 1e300)
}

/// Draw alpha_t (one time slot, all components) from its exact Gaussian full
/// conditional. Slot 0 is the random-walk root, which sees no data.
pub fn gibbs_update_alpha_at<R: Rng + ?Sized>(
    state: &mut ParameterState,
    dims: &ModelDims,
    prior: &PriorSpec,
    t: usize,
    rng: &mut R,
) {
    let p = dims.p;
    let t_max = dims.n_years;
    for m in 0..p {
        let (precision, weighted) = if t == 0 {
            let w = state.w_alpha[m];
            (
                1.0 / prior.initial_variance + 1.0 / w,
                prior.initial_mean / prior.initial_variance + state.alpha_at(dims, 1)[m] / w,
            )
        } else {
            let w = state.w_alpha[m];
            let mut precision = 1.0 / w; // backward neighbor alpha_{t-1}
            let mut weighted = state.alpha_at(dims, t - 1)[m] / w;
            if t < t_max {
                precision += 1.0 / w;
                weighted += state.alpha_at(dims, t + 1)[m] / w;
            }
            for i0 in 0..dims.n_levels {
                let v = state.v_beta_block(dims, i0)[m];
                precision += 1.0 / v;
                weighted += state.beta_block(dims, i0, t - 1)[m] / v;
            }
            (precision, weighted)
        };
        let mean = weighted / precision;
        let sd = (1.0 / precision).sqrt();
        let eps: f64 = rng.sample(StandardNormal);
        state.alpha[t * p + m] = mean + sd * eps;
    }
}

/// Gibbs sweep over the whole alpha path, root first.
pub fn gibbs_update_alpha<R: Rng + ?Sized>(
    state: &mut ParameterState,
    dims: &ModelDims,
    prior: &PriorSpec,
    rng: &mut R,
) {
    for t in 0..=dims.n_years {
        gibbs_update_alpha_at(state, dims, prior, t, rng);
    }
}

/// Draw the gamma layer from its Gaussian full conditionals.
///
/// M1/M2 have no sampled gamma (it is fixed equal to the shared delta).
/// M3 has a single static gamma pooled across levels; M4/M5 a random walk
/// whose root gamma_0 is an extra node, like alpha_0.
pub fn gibbs_update_gamma<R: Rng + ?Sized>(
    state: &mut ParameterState,
    dims: &ModelDims,
    prior: &PriorSpec,
    rng: &mut R,
) {
    let q = dims.q;
    match dims.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => {}
        PrecisionVariant::M3 => {
            for k in 0..q {
                let mut precision = 1.0 / prior.initial_variance;
                let mut weighted = prior.initial_mean / prior.initial_variance;
                for i0 in 0..dims.n_levels {
                    let v = state.v_delta_block(dims, i0)[k];
                    precision += 1.0 / v;
                    weighted += state.delta_unit(dims, i0)[k] / v;
                }
                let mean = weighted / precision;
                let sd = (1.0 / precision).sqrt();
                let eps: f64 = rng.sample(StandardNormal);
                state.gamma[k] = mean + sd * eps;
            }
        }
        PrecisionVariant::M4 | PrecisionVariant::M5 => {
            for t in 0..=dims.n_years {
                gibbs_update_gamma_at(state, dims, prior, t, rng);
            }
        }
    }
}

/// One time slot of the gamma walk (M4/M5 only).
pub fn gibbs_update_gamma_at<R: Rng + ?Sized>(
    state: &mut ParameterState,
    dims: &ModelDims,
    prior: &PriorSpec,
    t: usize,
    rng: &mut R,
) {
    debug_assert!(dims.has_gamma_walk());
    let q = dims.q;
    let t_max = dims.n_years;
    for k in 0..q {
        let w = state.w_gamma[k];
        let (mut precision, mut weighted) = if t == 0 {
            (
                1.0 / prior.initial_variance + 1.0 / w,
                prior.initial_mean / prior.initial_variance
                    + state.gamma[q + k] / w,
            )
        } else {
            let mut precision = 1.0 / w;
            let mut weighted = state.gamma[(t - 1) * q + k] / w;
            if t < t_max {
                precision += 1.0 / w;
                weighted += state.gamma[(t + 1) * q + k] / w;
            }
            (precision, weighted)
        };
        if t >= 1 {
            match dims.variant {
                PrecisionVariant::M4 => {
                    let v = state.v_delta_block(dims, 0)[k];
                    precision += 1.0 / v;
                    weighted += state.delta_unit(dims, t - 1)[k] / v;
                }
                PrecisionVariant::M5 => {
                    for i0 in 0..dims.n_levels {
                        let v = state.v_delta_block(dims, i0)[k];
                        precision += 1.0 / v;
                        weighted += state.delta_unit(dims, dims.delta_unit_of(i0, t - 1))[k] / v;
                    }
                }
                _ => unreachable!(),
            }
        }
        let mean = weighted / precision;
        let sd = (1.0 / precision).sqrt();
        let eps: f64 = rng.sample(StandardNormal);
        state.gamma[t * q + k] = mean + sd * eps;
    }
}

/// Conjugate draws of every variance block from IG(a + n/2, b + SS/2),
/// where the deviations are the Gaussian residuals each block governs.
/// Tied delta blocks contribute their deviations once.
pub fn gibbs_update_variances<R: Rng + ?Sized>(
    state: &mut ParameterState,
    dims: &ModelDims,
    prior: &PriorSpec,
    rng: &mut R,
) {
    let a = prior.variance_shape;
    let mut devs: Vec<f64> = Vec::with_capacity(dims.n_years.max(dims.n_levels));

    // V_beta[i, m]: deviations beta_mit - alpha_mt over t.
    for i0 in 0..dims.n_levels {
        for m in 0..dims.p {
            devs.clear();
            for t0 in 0..dims.n_years {
                devs.push(state.beta_block(dims, i0, t0)[m] - state.alpha_at(dims, t0 + 1)[m]);
            }
            let (shape, rate) = ig_conditional(a, prior.rate_for(prior.v_beta_prior_mean), &devs);
            state.v_beta[i0 * dims.p + m] = sample_inverse_gamma(shape, rate, rng);
        }
    }
    // W_alpha[m]: walk increments alpha_mt - alpha_m,t-1 (root included).
    for m in 0..dims.p {
        devs.clear();
        for t in 1..=dims.n_years {
            devs.push(state.alpha_at(dims, t)[m] - state.alpha_at(dims, t - 1)[m]);
        }
        let (shape, rate) = ig_conditional(a, prior.rate_for(prior.w_alpha_prior_mean), &devs);
        state.w_alpha[m] = sample_inverse_gamma(shape, rate, rng);
    }
    // V_delta blocks at the variant's granularity.
    match dims.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => {}
        PrecisionVariant::M3 => {
            for i0 in 0..dims.n_levels {
                for k in 0..dims.q {
                    let dev = state.delta_unit(dims, i0)[k] - state.gamma[k];
                    let (shape, rate) =
                        ig_conditional(a, prior.rate_for(prior.v_delta_prior_mean), &[dev]);
                    state.v_delta[i0 * dims.q + k] = sample_inverse_gamma(shape, rate, rng);
                }
            }
        }
        PrecisionVariant::M4 => {
            for k in 0..dims.q {
                devs.clear();
                for t0 in 0..dims.n_years {
                    devs.push(state.delta_unit(dims, t0)[k] - state.gamma[(t0 + 1) * dims.q + k]);
                }
                let (shape, rate) =
                    ig_conditional(a, prior.rate_for(prior.v_delta_prior_mean), &devs);
                state.v_delta[k] = sample_inverse_gamma(shape, rate, rng);
            }
        }
        PrecisionVariant::M5 => {
            for i0 in 0..dims.n_levels {
                for k in 0..dims.q {
                    devs.clear();
                    for t0 in 0..dims.n_years {
                        devs.push(
                            state.delta_unit(dims, dims.delta_unit_of(i0, t0))[k]
                                - state.gamma[(t0 + 1) * dims.q + k],
                        );
                    }
                    let (shape, rate) =
                        ig_conditional(a, prior.rate_for(prior.v_delta_prior_mean), &devs);
                    state.v_delta[i0 * dims.q + k] = sample_inverse_gamma(shape, rate, rng);
                }
            }
        }
    }
    // W_gamma[k]: walk increments where the gamma walk exists.
    if dims.has_gamma_walk() {
        for k in 0..dims.q {
            devs.clear();
            for t in 1..=dims.n_years {
                devs.push(state.gamma[t * dims.q + k] - state.gamma[(t - 1) * dims.q + k]);
            }
            let (shape, rate) = ig_conditional(a, prior.rate_for(prior.w_gamma_prior_mean), &devs);
            state.w_gamma[k] = sample_inverse_gamma(shape, rate, rng);
        }
    }
}

// ---------------------------------------------------------------------------
// Block log posteriors
// ---------------------------------------------------------------------------

/// Log posterior of one beta block with candidate values substituted.
fn beta_block_logpost(
    table: &ObservationTable,
    dims: &ModelDims,
    state: &ParameterState,
    i0: usize,
    t0: usize,
    candidate: &[f64],
) -> f64 {
    let mut lp = 0.0;
    let delta = state.delta_for(dims, i0, t0);
    for school in 1..=table.layout().n_schools(i0 + 1) {
        let idx = PanelIndex { level: i0 + 1, school, year: t0 + 1 };
        lp += obs_logdensity(
            table.response(idx),
            table.mean_row(idx),
            table.precision_row(idx),
            candidate,
            delta,
            dims.family,
            DensityScale::Response,
        );
        if lp == f64::NEG_INFINITY {
            return lp;
        }
    }
    let alpha = state.alpha_at(dims, t0 + 1);
    let vb = state.v_beta_block(dims, i0);
    for m in 0..dims.p {
        lp += normal_logpdf_var(candidate[m], alpha[m], vb[m]);
    }
    lp
}

/// Cells (i0, t0) governed by delta storage unit `u`.
fn delta_unit_cells(dims: &ModelDims, u: usize) -> Vec<(usize, usize)> {
    match dims.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => (0..dims.n_levels)
            .flat_map(|i0| (0..dims.n_years).map(move |t0| (i0, t0)))
            .collect(),
        PrecisionVariant::M3 => (0..dims.n_years).map(|t0| (u, t0)).collect(),
        PrecisionVariant::M4 => (0..dims.n_levels).map(|i0| (i0, u)).collect(),
        PrecisionVariant::M5 => vec![(u / dims.n_years, u % dims.n_years)],
    }
}

/// Log posterior of one delta unit with candidate values substituted.
fn delta_unit_logpost(
    table: &ObservationTable,
    dims: &ModelDims,
    prior: &PriorSpec,
    state: &ParameterState,
    u: usize,
    candidate: &[f64],
) -> f64 {
    let mut lp = 0.0;
    for (i0, t0) in delta_unit_cells(dims, u) {
        let beta = state.beta_block(dims, i0, t0);
        for school in 1..=table.layout().n_schools(i0 + 1) {
            let idx = PanelIndex { level: i0 + 1, school, year: t0 + 1 };
            lp += obs_logdensity(
                table.response(idx),
                table.mean_row(idx),
                table.precision_row(idx),
                beta,
                candidate,
                dims.family,
                DensityScale::Response,
            );
            if lp == f64::NEG_INFINITY {
                return lp;
            }
        }
    }
    match dims.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => {
            for k in 0..dims.q {
                lp += normal_logpdf_var(candidate[k], prior.initial_mean, prior.initial_variance);
            }
        }
        PrecisionVariant::M3 => {
            let vd = state.v_delta_block(dims, u);
            for k in 0..dims.q {
                lp += normal_logpdf_var(candidate[k], state.gamma[k], vd[k]);
            }
        }
        PrecisionVariant::M4 => {
            let vd = state.v_delta_block(dims, 0);
            let g = state.gamma_for(dims, u + 1);
            for k in 0..dims.q {
                lp += normal_logpdf_var(candidate[k], g[k], vd[k]);
            }
        }
        PrecisionVariant::M5 => {
            let i0 = u / dims.n_years;
            let t0 = u % dims.n_years;
            let vd = state.v_delta_block(dims, i0);
            let g = state.gamma_for(dims, t0 + 1);
            for k in 0..dims.q {
                lp += normal_logpdf_var(candidate[k], g[k], vd[k]);
            }
        }
    }
    lp
}

// ---------------------------------------------------------------------------
// Chain driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum BlockKind {
    Beta { i0: usize, t0: usize },
    Delta { unit: usize },
}

struct McmcBlock {
    kind: BlockKind,
    name: String,
    dim: usize,
    log_scale: f64,
    target: f64,
    window_proposed: u64,
    window_accepted: u64,
    windows_done: u64,
    post_proposed: u64,
    post_accepted: u64,
}

fn target_rate(dim: usize, override_target: Option<f64>) -> f64 {
    if let Some(t) = override_target {
        return t;
    }
    match dim {
        1 => 0.44,
        d if d >= 5 => 0.234,
        d => 0.44 + (0.234 - 0.44) * (d as f64 - 1.0) / 4.0,
    }
}

fn make_blocks(dims: &ModelDims, config: &SamplerConfig) -> Vec<McmcBlock> {
    let mut blocks = Vec::new();
    for i0 in 0..dims.n_levels {
        for t0 in 0..dims.n_years {
            blocks.push(McmcBlock {
                kind: BlockKind::Beta { i0, t0 },
                name: format!("beta[i={},t={}]", i0 + 1, t0 + 1),
                dim: dims.p,
                log_scale: (2.4 / (dims.p as f64).sqrt()).ln(),
                target: target_rate(dims.p, config.target_accept),
                window_proposed: 0,
                window_accepted: 0,
                windows_done: 0,
                post_proposed: 0,
                post_accepted: 0,
            });
        }
    }
    for u in 0..dims.n_delta_units() {
        let name = match dims.variant {
            PrecisionVariant::M1 | PrecisionVariant::M2 => "delta".to_string(),
            PrecisionVariant::M3 => format!("delta[i={}]", u + 1),
            PrecisionVariant::M4 => format!("delta[t={}]", u + 1),
            PrecisionVariant::M5 => format!(
                "delta[i={},t={}]",
                u / dims.n_years + 1,
                u % dims.n_years + 1
            ),
        };
        blocks.push(McmcBlock {
            kind: BlockKind::Delta { unit: u },
            name,
            dim: dims.q,
            log_scale: (2.4 / (dims.q as f64).sqrt()).ln(),
            target: target_rate(dims.q, config.target_accept),
            window_proposed: 0,
            window_accepted: 0,
            windows_done: 0,
            post_proposed: 0,
            post_accepted: 0,
        });
    }
    blocks
}

/// Run a single chain with the given index; the RNG stream is derived from
/// (config.seed, chain_index).
pub fn run_chain_indexed(
    table: &ObservationTable,
    spec: &ModelSpec,
    config: &SamplerConfig,
    chain_index: u32,
) -> Result<ChainOutput> {
    config.validate()?;
    let dims = ModelDims::new(spec, table)?;
    let prior = &spec.prior;
    let mut rng = derive_rng(config.seed, "chain", chain_index as u64);

    let mut state = ParameterState::init(&dims, prior);
    if config.warm_start {
        if let Some(ws) = crate::warmstart::ml_warm_start(table, spec)? {
            state = ws.state;
        }
    }

    let mut blocks = make_blocks(&dims, config);

    // The posterior must be finite at the starting point, block by block.
    for block in &blocks {
        let lp = match block.kind {
            BlockKind::Beta { i0, t0 } => {
                beta_block_logpost(table, &dims, &state, i0, t0, state.beta_block(&dims, i0, t0))
            }
            BlockKind::Delta { unit } => {
                delta_unit_logpost(table, &dims, prior, &state, unit, state.delta_unit(&dims, unit))
            }
        };
        if !lp.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite log posterior at initialization in block {}",
                block.name
            )));
        }
    }

    let stored = config.stored_draws() as usize;
    let mut draws = Vec::with_capacity(stored);
    let mut log_likelihoods = Vec::with_capacity(stored);
    let mut deviances = Vec::with_capacity(stored);
    let mut candidate: Vec<f64> = Vec::new();

    for iter in 1..=config.iterations {
        let in_burn = iter <= config.burn_in;
        for block in blocks.iter_mut() {
            let scale = block.log_scale.exp();
            let accepted = match block.kind {
                BlockKind::Beta { i0, t0 } => {
                    let current = state.beta_block(&dims, i0, t0);
                    let lp_cur = beta_block_logpost(table, &dims, &state, i0, t0, current);
                    candidate.clear();
                    candidate.extend_from_slice(current);
                    for c in candidate.iter_mut() {
                        let eps: f64 = rng.sample(StandardNormal);
                        *c += scale * eps;
                    }
                    let lp_cand = beta_block_logpost(table, &dims, &state, i0, t0, &candidate);
                    let accept = rng.random::<f64>().ln() < lp_cand - lp_cur;
                    if accept {
                        state.beta_block_mut(&dims, i0, t0).copy_from_slice(&candidate);
                    }
                    accept
                }
                BlockKind::Delta { unit } => {
                    let current = state.delta_unit(&dims, unit);
                    let lp_cur = delta_unit_logpost(table, &dims, prior, &state, unit, current);
                    candidate.clear();
                    candidate.extend_from_slice(current);
                    for c in candidate.iter_mut() {
                        let eps: f64 = rng.sample(StandardNormal);
                        *c += scale * eps;
                    }
                    let lp_cand = delta_unit_logpost(table, &dims, prior, &state, unit, &candidate);
                    let accept = rng.random::<f64>().ln() < lp_cand - lp_cur;
                    if accept {
                        state.delta_unit_mut(&dims, unit).copy_from_slice(&candidate);
                    }
                    accept
                }
            };
            if in_burn {
                block.window_proposed += 1;
                block.window_accepted += accepted as u64;
            } else {
                block.post_proposed += 1;
                block.post_accepted += accepted as u64;
            }
        }

        gibbs_update_alpha(&mut state, &dims, prior, &mut rng);
        gibbs_update_gamma(&mut state, &dims, prior, &mut rng);
        gibbs_update_variances(&mut state, &dims, prior, &mut rng);

        // Robbins-Monro scale adaptation, frozen after burn-in.
        if in_burn && iter % config.adapt_window == 0 {
            for block in blocks.iter_mut() {
                if block.window_proposed > 0 {
                    let rate = block.window_accepted as f64 / block.window_proposed as f64;
                    block.windows_done += 1;
                    let step = 1.0 / (block.windows_done as f64).sqrt();
                    block.log_scale += step * (rate - block.target);
                    block.log_scale = block.log_scale.clamp(-14.0, 7.0);
                    block.window_proposed = 0;
                    block.window_accepted = 0;
                }
            }
        }

        if !in_burn && (iter - config.burn_in) % config.thin == 0 {
            let ll = log_likelihood(table, &state, spec)?;
            draws.push(state.clone());
            log_likelihoods.push(ll);
            deviances.push(-2.0 * ll);
        }

        if config.progress && iter % 1000 == 0 {
            eprintln!("chain {chain_index}: iteration {iter}/{}", config.iterations);
        }
    }

    let blocks = blocks
        .into_iter()
        .map(|b| BlockDiagnostics {
            name: b.name,
            dim: b.dim,
            acceptance_rate: if b.post_proposed > 0 {
                b.post_accepted as f64 / b.post_proposed as f64
            } else {
                0.0
            },
            proposal_scale: b.log_scale.exp(),
        })
        .collect();

    Ok(ChainOutput {
        chain_index,
        draws,
        log_likelihoods,
        deviances,
        blocks,
    })
}

/// Run chain 0 of the configuration.
pub fn run_chain(
    table: &ObservationTable,
    spec: &ModelSpec,
    config: &SamplerConfig,
) -> Result<ChainOutput> {
    run_chain_indexed(table, spec, config, 0)
}

/// Run `config.chains` independent chains in parallel. Chain k draws from an
/// RNG stream derived from (seed, k); outputs come back in chain order, so
/// the result does not depend on scheduling.
pub fn run_chains(
    table: &ObservationTable,
    spec: &ModelSpec,
    config: &SamplerConfig,
) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    if config.chains == 1 {
        return Ok(vec![run_chain_indexed(table, spec, config, 0)?]);
    }
    let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|k| scope.spawn(move || run_chain_indexed(table, spec, config, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}
