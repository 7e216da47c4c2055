//! Optional maximum-likelihood warm start.
//!
//! Fits every (level, year) cell independently — Newton iterations on the
//! beta log likelihood over (beta, delta), or ordinary least squares on
//! logit(y) for the normal baseline — then uses the scatter of the per-cell
//! estimates to pick the variance-block prior means and the sampler's
//! starting coefficients. Cells that fail to converge fall back to zeros and
//! are ignored in the aggregation.

use crate::data::{ObservationTable, PanelIndex};
use crate::error::Result;
use crate::model::{Family, ModelDims, ModelSpec, ParameterState, PriorSpec};
use crate::special::{digamma, logistic, logit, trigamma};

const MAX_NEWTON_ITERS: usize = 60;
const GRAD_TOL: f64 = 1e-8;
const VARIANCE_FLOOR: f64 = 1e-4;
const VARIANCE_CEIL: f64 = 1e3;

/// Warm-start product: an initial state and adjusted variance prior means.
pub struct WarmStart {
    pub state: ParameterState,
    pub prior: PriorSpec,
}

/// Dense Gaussian elimination with partial pivoting; `a` is n x n row-major.
/// Returns the solution of a x = b, or None when the system is singular.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[piv * n + col].abs() {
                piv = row;
            }
        }
        if a[piv * n + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in (col + 1)..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in (col + 1)..n {
            s -= a[col * n + k] * x[k];
        }
        x[col] = s / a[col * n + col];
        if !x[col].is_finite() {
            return None;
        }
    }
    Some(x)
}

struct CellData {
    y: Vec<f64>,
    x: Vec<f64>, // n x p
    q: Vec<f64>, // n x q
}

fn cell_data(table: &ObservationTable, i0: usize, t0: usize) -> CellData {
    let n = table.layout().n_schools(i0 + 1);
    let (p, q) = (table.p(), table.q());
    let mut data = CellData {
        y: Vec::with_capacity(n),
        x: Vec::with_capacity(n * p),
        q: Vec::with_capacity(n * q),
    };
    for school in 1..=n {
        let idx = PanelIndex { level: i0 + 1, school, year: t0 + 1 };
        data.y.push(table.response(idx));
        data.x.extend_from_slice(table.mean_row(idx));
        data.q.extend_from_slice(table.precision_row(idx));
    }
    data
}

fn beta_cell_loglik(data: &CellData, p: usize, q: usize, theta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (j, &y) in data.y.iter().enumerate() {
        let eta: f64 = data.x[j * p..(j + 1) * p]
            .iter()
            .zip(&theta[..p])
            .map(|(a, b)| a * b)
            .sum();
        let zeta: f64 = data.q[j * q..(j + 1) * q]
            .iter()
            .zip(&theta[p..])
            .map(|(a, b)| a * b)
            .sum();
        let mu = logistic(eta).clamp(1e-12, 1.0 - 1e-12);
        let phi = (-zeta).exp();
        ll += crate::model::beta_logpdf(y, mu, phi).map_or(f64::NEG_INFINITY, |v| v);
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    ll
}

/// Newton fit of (beta, delta) on one cell's beta log likelihood.
fn fit_beta_cell(data: &CellData, p: usize, q: usize) -> Option<Vec<f64>> {
    let dim = p + q;
    if data.y.len() < dim + 2 {
        return None;
    }
    let mut theta = vec![0.0; dim];
    let mut ll = beta_cell_loglik(data, p, q, &theta);
    if !ll.is_finite() {
        return None;
    }
    for _ in 0..MAX_NEWTON_ITERS {
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for (j, &y) in data.y.iter().enumerate() {
            let xr = &data.x[j * p..(j + 1) * p];
            let qr = &data.q[j * q..(j + 1) * q];
            let eta: f64 = xr.iter().zip(&theta[..p]).map(|(a, b)| a * b).sum();
            let zeta: f64 = qr.iter().zip(&theta[p..]).map(|(a, b)| a * b).sum();
            let mu = logistic(eta).clamp(1e-12, 1.0 - 1e-12);
            let phi = (-zeta).exp();
            let (a, b) = (mu * phi, (1.0 - mu) * phi);
            let (s, r) = (y.ln(), (1.0 - y).ln());
            let mu1 = mu * (1.0 - mu);
            let u = s - r - digamma(a) + digamma(b);
            let l_eta = phi * mu1 * u;
            let l_phi = digamma(phi) - mu * digamma(a) - (1.0 - mu) * digamma(b) + mu * s + (1.0 - mu) * r;
            let l_zeta = -phi * l_phi;
            let l_etaeta = phi * mu1 * (1.0 - 2.0 * mu) * u - phi * phi * mu1 * mu1 * (trigamma(a) + trigamma(b));
            let l_phiphi = trigamma(phi) - mu * mu * trigamma(a) - (1.0 - mu) * (1.0 - mu) * trigamma(b);
            let l_zetazeta = phi * l_phi + phi * phi * l_phiphi;
            let l_etazeta = -l_eta + phi * mu1 * (a * trigamma(a) - b * trigamma(b));
            for m in 0..p {
                grad[m] += l_eta * xr[m];
                for m2 in 0..p {
                    hess[m * dim + m2] += l_etaeta * xr[m] * xr[m2];
                }
                for k in 0..q {
                    hess[m * dim + (p + k)] += l_etazeta * xr[m] * qr[k];
                    hess[(p + k) * dim + m] += l_etazeta * xr[m] * qr[k];
                }
            }
            for k in 0..q {
                grad[p + k] += l_zeta * qr[k];
                for k2 in 0..q {
                    hess[(p + k) * dim + (p + k2)] += l_zetazeta * qr[k] * qr[k2];
                }
            }
        }
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < GRAD_TOL {
            return Some(theta);
        }
        // Newton direction: solve (-H) s = g.
        let neg_h: Vec<f64> = hess.iter().map(|h| -h).collect();
        let step = solve_dense(neg_h, grad.clone(), dim)?;
        // Step halving until the log likelihood improves.
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + lambda * s).collect();
            let cll = beta_cell_loglik(data, p, q, &cand);
            if cll.is_finite() && cll >= ll - 1e-12 {
                theta = cand;
                ll = cll;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !moved {
            return Some(theta);
        }
    }
    Some(theta)
}

/// OLS of logit(y) on x plus a residual-precision intercept for delta.
fn fit_normal_cell(data: &CellData, p: usize, q: usize) -> Option<Vec<f64>> {
    let n = data.y.len();
    if n < p + 2 {
        return None;
    }
    let mut xtx = vec![0.0; p * p];
    let mut xtz = vec![0.0; p];
    let z: Vec<f64> = data.y.iter().map(|&y| logit(y)).collect();
    for j in 0..n {
        let xr = &data.x[j * p..(j + 1) * p];
        for m in 0..p {
            xtz[m] += xr[m] * z[j];
            for m2 in 0..p {
                xtx[m * p + m2] += xr[m] * xr[m2];
            }
        }
    }
    let beta = solve_dense(xtx, xtz, p)?;
    let mut rss = 0.0;
    for j in 0..n {
        let xr = &data.x[j * p..(j + 1) * p];
        let fit: f64 = xr.iter().zip(&beta).map(|(a, b)| a * b).sum();
        rss += (z[j] - fit) * (z[j] - fit);
    }
    let dof = (n - p).max(1) as f64;
    let s2 = (rss / dof).max(1e-10);
    // log phi = +q'delta for the normal family; intercept-only estimate.
    let mut theta = beta;
    theta.push(-s2.ln());
    theta.extend(std::iter::repeat(0.0).take(q - 1));
    Some(theta)
}

fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Fit every cell independently and derive starting coefficients plus
/// variance-block prior means. Returns None when no cell converged.
pub fn ml_warm_start(table: &ObservationTable, spec: &ModelSpec) -> Result<Option<WarmStart>> {
    let dims = ModelDims::new(spec, table)?;
    let (p, q) = (dims.p, dims.q);
    let (n_levels, n_years) = (dims.n_levels, dims.n_years);

    let mut cell_fits: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_levels * n_years);
    for i0 in 0..n_levels {
        for t0 in 0..n_years {
            let data = cell_data(table, i0, t0);
            let fit = match spec.family {
                Family::Beta => fit_beta_cell(&data, p, q),
                Family::NormalLogit => fit_normal_cell(&data, p, q),
            };
            cell_fits.push(fit.filter(|th| th.iter().all(|v| v.is_finite())));
        }
    }
    if cell_fits.iter().all(|f| f.is_none()) {
        return Ok(None);
    }

    let fit_at = |i0: usize, t0: usize| cell_fits[i0 * n_years + t0].as_ref();
    let mut state = ParameterState::init(&dims, &spec.prior);

    // Starting coefficients: per-cell estimates where available; the alpha
    // and gamma paths from cross-level means, roots copied from t = 1.
    for i0 in 0..n_levels {
        for t0 in 0..n_years {
            if let Some(theta) = fit_at(i0, t0) {
                state.beta_block_mut(&dims, i0, t0).copy_from_slice(&theta[..p]);
            }
        }
    }
    for t0 in 0..n_years {
        for m in 0..p {
            let vals: Vec<f64> = (0..n_levels)
                .filter_map(|i0| fit_at(i0, t0).map(|th| th[m]))
                .collect();
            if let Some(mu) = mean_of(&vals) {
                state.alpha[(t0 + 1) * p + m] = mu;
            }
        }
    }
    for m in 0..p {
        state.alpha[m] = state.alpha[p + m];
    }
    for u in 0..dims.n_delta_units() {
        let mut acc = vec![Vec::new(); q];
        for (i0, t0) in (0..n_levels).flat_map(|i0| (0..n_years).map(move |t0| (i0, t0))) {
            if dims.delta_unit_of(i0, t0) == u {
                if let Some(theta) = fit_at(i0, t0) {
                    for k in 0..q {
                        acc[k].push(theta[p + k]);
                    }
                }
            }
        }
        for k in 0..q {
            if let Some(mu) = mean_of(&acc[k]) {
                state.delta_unit_mut(&dims, u)[k] = mu;
            }
        }
    }
    if dims.gamma_len() > 0 {
        match dims.variant {
            crate::model::PrecisionVariant::M3 => {
                for k in 0..q {
                    let vals: Vec<f64> = (0..dims.n_delta_units())
                        .map(|u| state.delta_unit(&dims, u)[k])
                        .collect();
                    state.gamma[k] = mean_of(&vals).unwrap_or(0.0);
                }
            }
            _ => {
                for t0 in 0..n_years {
                    for k in 0..q {
                        let vals: Vec<f64> = (0..n_levels)
                            .filter_map(|i0| fit_at(i0, t0).map(|th| th[p + k]))
                            .collect();
                        state.gamma[(t0 + 1) * q + k] = mean_of(&vals).unwrap_or(0.0);
                    }
                }
                for k in 0..q {
                    state.gamma[k] = state.gamma[q + k];
                }
            }
        }
    }

    // Variance prior means from the scatter of the per-cell estimates.
    let clampv = |v: f64| v.clamp(VARIANCE_FLOOR, VARIANCE_CEIL);
    let mut prior = spec.prior.clone();

    let mut v_beta_pool = Vec::new();
    for i0 in 0..n_levels {
        for m in 0..p {
            let per_t: Vec<f64> = (0..n_years)
                .filter_map(|t0| fit_at(i0, t0).map(|th| th[m]))
                .collect();
            if let Some(v) = sample_variance(&per_t) {
                v_beta_pool.push(v);
            }
        }
    }
    if let Some(v) = mean_of(&v_beta_pool) {
        prior.v_beta_prior_mean = clampv(v);
    }

    let mut w_alpha_pool = Vec::new();
    for m in 0..p {
        let path: Vec<f64> = (1..=n_years).map(|t| state.alpha[t * p + m]).collect();
        let diffs: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(v) = sample_variance(&diffs) {
            w_alpha_pool.push(v);
        }
    }
    if let Some(v) = mean_of(&w_alpha_pool) {
        prior.w_alpha_prior_mean = clampv(v);
    }

    let mut v_delta_pool = Vec::new();
    for t0 in 0..n_years {
        for k in 0..q {
            let per_i: Vec<f64> = (0..n_levels)
                .filter_map(|i0| fit_at(i0, t0).map(|th| th[p + k]))
                .collect();
            if let Some(v) = sample_variance(&per_i) {
                v_delta_pool.push(v);
            }
        }
    }
    if let Some(v) = mean_of(&v_delta_pool) {
        prior.v_delta_prior_mean = clampv(v);
    }

    if dims.has_gamma_walk() {
        let mut w_gamma_pool = Vec::new();
        for k in 0..q {
            let path: Vec<f64> = (1..=n_years).map(|t| state.gamma[t * q + k]).collect();
            let diffs: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
            if let Some(v) = sample_variance(&diffs) {
                w_gamma_pool.push(v);
            }
        }
        if let Some(v) = mean_of(&w_gamma_pool) {
            prior.w_gamma_prior_mean = clampv(v);
        }
    }

    // Start the variance entries at the (possibly updated) prior means.
    state.v_beta.fill(prior.v_beta_prior_mean);
    state.w_alpha.fill(prior.w_alpha_prior_mean);
    state.v_delta.fill(prior.v_delta_prior_mean);
    state.w_gamma.fill(prior.w_gamma_prior_mean);

    Ok(Some(WarmStart { state, prior }))
}
