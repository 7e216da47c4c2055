//! Distributional validation of the sampler beyond per-update unit tests:
//! prior recovery on a data-free table, and a Geweke-style joint-invariance
//! smoke test alternating posterior sweeps with data resimulation.

mod common;

use betapanel::data::{ObservationTable, PanelLayout};
use betapanel::diagnostics::ess;
use betapanel::mcmc::{run_chain, SamplerConfig};
use betapanel::model::{
    CovariateSpec, Family, ModelDims, ModelSpec, ParameterState, PrecisionVariant, PriorSpec,
};
use betapanel::rng::derive_rng;
use betapanel::special::digamma;
use common::mean_var;
use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma, StandardNormal};

#[test]
fn data_free_chain_recovers_the_prior_walk() {
    // With zero observations the chain samples the prior, so the stored
    // alpha_t variance across draws grows linearly in t (walk variance).
    let spec = ModelSpec {
        variant: PrecisionVariant::M2,
        family: Family::Beta,
        mean_covariates: vec![],
        precision_covariates: vec![],
        prior: PriorSpec {
            initial_variance: 1.0,
            w_alpha_prior_mean: 1.0,
            v_beta_prior_mean: 1.0,
            ..PriorSpec::default()
        },
        label: None,
    };
    let n_years = 6;
    let table = ObservationTable::empty(1, n_years, 1, 1).unwrap();
    let config = SamplerConfig {
        iterations: 22_000,
        burn_in: 2_000,
        thin: 10,
        seed: 71,
        ..SamplerConfig::default()
    };
    let out = run_chain(&table, &spec, &config).unwrap();
    assert_eq!(out.len(), 2_000);

    let dims = ModelDims::new(&spec, &table).unwrap();
    let variances: Vec<f64> = (1..=n_years)
        .map(|t| {
            let series: Vec<f64> = out.draws.iter().map(|d| d.alpha_at(&dims, t)[0]).collect();
            mean_var(&series).1
        })
        .collect();

    // Least-squares slope of var_t on t must be positive, and the endpoints
    // must be ordered.
    let n = variances.len() as f64;
    let t_mean = (n + 1.0) / 2.0;
    let v_mean = variances.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &v) in variances.iter().enumerate() {
        let t = (k + 1) as f64;
        num += (t - t_mean) * (v - v_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    let slope = num / den;
    assert!(slope > 0.0, "variance-vs-time slope {slope}, variances {variances:?}");
    assert!(
        variances[n_years - 1] > variances[0],
        "walk variance should accumulate: {variances:?}"
    );
}

/// Draw one state from the model prior, written here independently of the
/// library's initialization or simulation code.
fn draw_prior_state<R: Rng>(
    dims: &ModelDims,
    prior: &PriorSpec,
    rng: &mut R,
) -> ParameterState {
    let a = prior.variance_shape;
    let mut ig = |mean: f64| {
        let rate = mean * (a - 1.0);
        let g: f64 = Gamma::new(a, 1.0 / rate).unwrap().sample(rng);
        1.0 / g
    };
    let mut state = ParameterState::init(dims, prior);
    for v in state.v_beta.iter_mut() {
        *v = ig(prior.v_beta_prior_mean);
    }
    for v in state.w_alpha.iter_mut() {
        *v = ig(prior.w_alpha_prior_mean);
    }
    let normal = |mean: f64, var: f64, rng: &mut R| -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        mean + var.sqrt() * eps
    };
    for m in 0..dims.p {
        state.alpha[m] = normal(prior.initial_mean, prior.initial_variance, rng);
        for t in 1..=dims.n_years {
            let prev = state.alpha[(t - 1) * dims.p + m];
            state.alpha[t * dims.p + m] = normal(prev, state.w_alpha[m], rng);
        }
    }
    for i0 in 0..dims.n_levels {
        for t0 in 0..dims.n_years {
            for m in 0..dims.p {
                let center = state.alpha[(t0 + 1) * dims.p + m];
                let v = state.v_beta[i0 * dims.p + m];
                state.beta[(i0 * dims.n_years + t0) * dims.p + m] = normal(center, v, rng);
            }
        }
    }
    // M2: the single delta unit is rooted in N(m0, C0).
    for k in 0..dims.q {
        state.delta[k] = normal(prior.initial_mean, prior.initial_variance, rng);
    }
    state
}

fn resimulate_responses<R: Rng>(
    template: &ObservationTable,
    dims: &ModelDims,
    state: &ParameterState,
    rng: &mut R,
) -> ObservationTable {
    let layout = template.layout().clone();
    let mut responses = Vec::with_capacity(template.n_obs());
    let mut mean_covariates = Vec::new();
    let mut precision_covariates = Vec::new();
    for idx in layout.iter() {
        let x = template.mean_row(idx);
        let qv = template.precision_row(idx);
        let beta = state.beta_block(dims, idx.level - 1, idx.year - 1);
        let delta = state.delta_for(dims, idx.level - 1, idx.year - 1);
        let eta: f64 = x.iter().zip(beta).map(|(u, v)| u * v).sum();
        let zeta: f64 = qv.iter().zip(delta).map(|(u, v)| u * v).sum();
        let mu = (1.0 / (1.0 + (-eta).exp())).clamp(1e-12, 1.0 - 1e-12);
        let phi = (-zeta).exp().clamp(1e-8, 1e8);
        let y: f64 = BetaDist::new(mu * phi, (1.0 - mu) * phi).unwrap().sample(rng);
        responses.push(y.clamp(f64::EPSILON, 1.0 - f64::EPSILON));
        mean_covariates.extend_from_slice(x);
        precision_covariates.extend_from_slice(qv);
    }
    ObservationTable::from_dense(
        layout,
        responses,
        mean_covariates,
        precision_covariates,
        template.mean_names().to_vec(),
        template.precision_names().to_vec(),
        (1..=dims.n_levels)
            .map(|i| {
                (1..=template.layout().n_schools(i))
                    .map(|j| format!("L{i}S{j}"))
                    .collect()
            })
            .collect(),
        (1..=dims.n_years as i64).collect(),
        (1..=dims.n_levels as i64).collect(),
    )
    .unwrap()
}

#[test]
fn joint_invariance_smoke_test() {
    // Successive-conditional sampling (one posterior sweep, then resimulate
    // the data given the state) leaves the prior invariant when the
    // transition kernels are correct. Compare marginal moments of alpha and
    // log V_beta against a direct prior-sampling stream.
    let prior = PriorSpec {
        variance_shape: 2.0,
        v_beta_prior_mean: 0.2,
        w_alpha_prior_mean: 0.2,
        v_delta_prior_mean: 0.2,
        w_gamma_prior_mean: 0.2,
        initial_mean: 0.0,
        initial_variance: 2.0,
    };
    let spec = ModelSpec {
        variant: PrecisionVariant::M2,
        family: Family::Beta,
        mean_covariates: vec![CovariateSpec { name: "x1".into(), standardize: false }],
        precision_covariates: vec![],
        prior: prior.clone(),
        label: None,
    };

    // Fixed covariates for a 2-level, 3-year, 5-school panel.
    let layout = PanelLayout::new(vec![5, 5], 3).unwrap();
    let n = layout.n_obs();
    let mut cov_rng = derive_rng(123, "invariance-covariates", 0);
    let mut mean_covariates = Vec::with_capacity(2 * n);
    for _ in 0..n {
        mean_covariates.push(1.0);
        let z: f64 = cov_rng.sample(StandardNormal);
        mean_covariates.push(z);
    }
    let template = ObservationTable::from_dense(
        layout,
        vec![0.5; n],
        mean_covariates,
        vec![1.0; n],
        vec!["intercept".into(), "x1".into()],
        vec!["intercept".into()],
        vec![
            (1..=5).map(|j| format!("L1S{j}")).collect(),
            (1..=5).map(|j| format!("L2S{j}")).collect(),
        ],
        vec![1, 2, 3],
        vec![1, 2],
    )
    .unwrap();
    let dims = ModelDims::new(&spec, &template).unwrap();

    // Direct prior stream.
    let mut prior_rng = derive_rng(123, "invariance-prior", 0);
    let r_prior = 4_000;
    let mut prior_alpha = Vec::with_capacity(r_prior);
    let mut prior_logv = Vec::with_capacity(r_prior);
    for _ in 0..r_prior {
        let s = draw_prior_state(&dims, &prior, &mut prior_rng);
        prior_alpha.push(s.alpha[dims.p]); // alpha_1, intercept component
        prior_logv.push(s.v_beta[0].ln());
    }

    // Successive-conditional stream: one-sweep chains via run_chain with
    // iterations = burn_in + 1 so exactly one stored sweep advances the
    // state, then data resimulated from it.
    let mut sc_rng = derive_rng(123, "invariance-sc", 0);
    let mut state = draw_prior_state(&dims, &prior, &mut sc_rng);
    let mut table = resimulate_responses(&template, &dims, &state, &mut sc_rng);
    let warmup = 300;
    let r_sc = 4_000;
    let mut sc_alpha = Vec::with_capacity(r_sc);
    let mut sc_logv = Vec::with_capacity(r_sc);
    for sweep in 0..(warmup + r_sc) {
        state = one_posterior_sweep(&table, &spec, &dims, state, 9_000_000 + sweep as u64);
        table = resimulate_responses(&template, &dims, &state, &mut sc_rng);
        if sweep >= warmup {
            sc_alpha.push(state.alpha[dims.p]);
            sc_logv.push(state.v_beta[0].ln());
        }
    }

    // Moment comparison with autocorrelation-aware standard errors.
    let compare = |a: &[f64], b: &[f64], label: &str| {
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        let ess_b = ess(b).unwrap_or(b.len() as f64 / 10.0);
        let se = (va / a.len() as f64 + vb / ess_b).sqrt();
        let z = (ma - mb) / se;
        assert!(
            z.abs() < 5.0,
            "{label}: prior mean {ma:.4} vs successive-conditional {mb:.4}, z = {z:.2}"
        );
    };
    compare(&prior_alpha, &sc_alpha, "alpha_1[0]");
    compare(&prior_logv, &sc_logv, "log v_beta[0]");

    // The analytic prior mean of log V under IG(2, rate) is ln(rate) - psi(2).
    let rate = prior.v_beta_prior_mean * (prior.variance_shape - 1.0);
    let expect_logv = rate.ln() - digamma(2.0);
    let (m_sc, v_sc) = mean_var(&sc_logv);
    let se = (v_sc / ess(&sc_logv).unwrap_or(sc_logv.len() as f64 / 10.0)).sqrt();
    assert!(
        (m_sc - expect_logv).abs() < 5.0 * se,
        "log V mean {m_sc:.4} vs analytic {expect_logv:.4} (se {se:.4})"
    );
}

/// One full posterior sweep starting from `state`, by running the public
/// per-update kernels in the documented order: MH beta blocks, Gibbs
/// alpha, MH delta blocks, Gibbs variances (gamma has no sampled layer
/// under M2).
fn one_posterior_sweep(
    table: &ObservationTable,
    spec: &ModelSpec,
    dims: &ModelDims,
    mut state: ParameterState,
    seed: u64,
) -> ParameterState {
    use betapanel::mcmc::{
        gibbs_update_alpha, gibbs_update_variances, mh_update_block,
    };
    use betapanel::model::{log_likelihood, log_prior};

    let mut rng = derive_rng(seed, "sweep", 0);
    let scale = 0.35;
    // Beta blocks.
    for i0 in 0..dims.n_levels {
        for t0 in 0..dims.n_years {
            let current = state.beta_block(dims, i0, t0).to_vec();
            let lp = |cand: &[f64]| {
                let mut s = state.clone();
                s.beta_block_mut(dims, i0, t0).copy_from_slice(cand);
                log_likelihood(table, &s, spec).unwrap_or(f64::NEG_INFINITY)
                    + log_prior(&s, spec, dims).unwrap_or(f64::NEG_INFINITY)
            };
            let (next, _) =
                mh_update_block(&current, lp, &vec![scale; dims.p], &mut rng).expect("finite");
            state.beta_block_mut(dims, i0, t0).copy_from_slice(&next);
        }
    }
    gibbs_update_alpha(&mut state, dims, &spec.prior, &mut rng);
    // Delta block (single unit under M2).
    let current = state.delta_unit(dims, 0).to_vec();
    let lp = |cand: &[f64]| {
        let mut s = state.clone();
        s.delta_unit_mut(dims, 0).copy_from_slice(cand);
        log_likelihood(table, &s, spec).unwrap_or(f64::NEG_INFINITY)
            + log_prior(&s, spec, dims).unwrap_or(f64::NEG_INFINITY)
    };
    let (next, _) = mh_update_block(&current, lp, &vec![scale; dims.q], &mut rng).expect("finite");
    state.delta_unit_mut(dims, 0).copy_from_slice(&next);
    gibbs_update_variances(&mut state, dims, &spec.prior, &mut rng);
    state
}
