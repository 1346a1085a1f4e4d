//! Baseline estimators that assume unconfoundedness given X: outcome
//! regression and inverse probability weighting. On confounded data these
//! are biased; they serve as comparators for the proximal estimators.

use crate::bridges::expit;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::moments::{solve_gmm, GmmConfig, MomentSystem, Solver};

use super::{bootstrap, BootstrapConfig, EstimateResult, EstimatorKind};

/// Propensity bound below/above which a positivity warning is recorded.
const PROPENSITY_EPS: f64 = 1e-6;

/// Outcome-regression estimator: linear regression of Y on (1, A, X),
/// reporting the treatment coefficient with a sandwich standard error.
/// Proxies and hidden columns are ignored.
pub fn naive_or(data: &Dataset) -> Result<EstimateResult> {
    let roles = data.roles();
    let a_idx = data.col_index(&roles.treatment).expect("validated role");
    let y_idx = data.col_index(&roles.outcome).expect("validated role");
    let mut x_idx = Vec::with_capacity(roles.covariates.len());
    for c in &roles.covariates {
        x_idx.push(data.col_index(c).expect("validated role"));
    }
    let p = 2 + x_idx.len();
    if data.n() <= p {
        return Err(Error::Validation(format!(
            "naive_or needs more than {p} rows, got {}",
            data.n()
        )));
    }
    // Stacked system: OLS score equations plus the tau = b_a reading.
    let dim = p + 1;
    let x_idx_r = x_idx.clone();
    let residual = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let a = d.value(a_idx, row);
        let mut fitted = theta[0] + theta[1] * a;
        for (k, &ci) in x_idx_r.iter().enumerate() {
            fitted += theta[2 + k] * d.value(ci, row);
        }
        let resid = d.value(y_idx, row) - fitted;
        out[0] = resid;
        out[1] = resid * a;
        for (k, &ci) in x_idx_r.iter().enumerate() {
            out[2 + k] = resid * d.value(ci, row);
        }
        out[dim - 1] = theta[dim - 1] - theta[1];
    };
    let x_idx_j = x_idx;
    let jacobian = move |d: &Dataset, row: usize, _theta: &[f64], out: &mut [f64]| {
        let mut design = vec![1.0, d.value(a_idx, row)];
        for &ci in &x_idx_j {
            design.push(d.value(ci, row));
        }
        for v in out.iter_mut() {
            *v = 0.0;
        }
        let p = design.len();
        for i in 0..p {
            for j in 0..p {
                out[i * dim + j] = -design[i] * design[j];
            }
        }
        out[(dim - 1) * dim + 1] = -1.0;
        out[(dim - 1) * dim + (dim - 1)] = 1.0;
    };
    let system = MomentSystem::new("naive_or", dim, dim, residual, jacobian).linear();
    let fit = solve_gmm(data, &system, &GmmConfig::default())?;
    let tau = fit.theta_hat[dim - 1];
    let mut result = EstimateResult::new(EstimatorKind::NaiveOr, tau, data.n());
    result.note("condition", fit.condition);
    match &fit.vcov {
        Some(v) => Ok(result.with_wald(v[(dim - 1, dim - 1)].sqrt())),
        None => {
            result.converged = false;
            Ok(result)
        }
    }
}

/// Logistic score equations for the propensity model P(A = 1 | X):
/// residuals `(A - expit(x'g)) x` over the design `(1, X...)`.
pub fn propensity_moment_system(data: &Dataset) -> MomentSystem {
    let roles = data.roles();
    let a_idx = data.col_index(&roles.treatment).expect("validated role");
    let mut x_idx = Vec::with_capacity(roles.covariates.len());
    for c in &roles.covariates {
        x_idx.push(data.col_index(c).expect("validated role"));
    }
    let dim = 1 + x_idx.len();
    let x_idx_r = x_idx.clone();
    let residual = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let mut lin = theta[0];
        for (k, &ci) in x_idx_r.iter().enumerate() {
            lin += theta[1 + k] * d.value(ci, row);
        }
        let resid = d.value(a_idx, row) - expit(lin);
        out[0] = resid;
        for (k, &ci) in x_idx_r.iter().enumerate() {
            out[1 + k] = resid * d.value(ci, row);
        }
    };
    let x_idx_j = x_idx;
    let jacobian = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let mut design = vec![1.0];
        for &ci in &x_idx_j {
            design.push(d.value(ci, row));
        }
        let mut lin = theta[0];
        for (k, v) in design.iter().enumerate().skip(1) {
            lin += theta[k] * v;
        }
        let p = expit(lin);
        let w = p * (1.0 - p);
        for i in 0..design.len() {
            for j in 0..design.len() {
                out[i * design.len() + j] = -w * design[i] * design[j];
            }
        }
    };
    MomentSystem::new("propensity", dim, dim, residual, jacobian)
}

/// Fits the logistic propensity by Gauss-Newton on the score equations,
/// returning (coefficients, converged, iterations).
fn fit_propensity(data: &Dataset) -> Result<(Vec<f64>, bool, usize)> {
    let system = propensity_moment_system(data);
    let fit = solve_gmm(
        data,
        &system,
        &GmmConfig {
            solver: Solver::GaussNewton,
            ..GmmConfig::default()
        },
    )?;
    Ok((
        fit.theta_hat.iter().copied().collect(),
        fit.converged,
        fit.iterations,
    ))
}

fn horvitz_thompson(data: &Dataset, gamma: &[f64]) -> (f64, usize) {
    let roles = data.roles();
    let a = data.treatment();
    let y = data.outcome();
    let x_cols: Vec<&[f64]> = roles
        .covariates
        .iter()
        .map(|c| data.col(c).expect("validated role"))
        .collect();
    let mut sum = 0.0;
    let mut violations = 0usize;
    for (i, (&ai, &yi)) in a.iter().zip(y).enumerate() {
        let mut lin = gamma[0];
        for (k, col) in x_cols.iter().enumerate() {
            lin += gamma[1 + k] * col[i];
        }
        let e = expit(lin);
        if !(PROPENSITY_EPS..=1.0 - PROPENSITY_EPS).contains(&e) {
            violations += 1;
        }
        let e = e.clamp(PROPENSITY_EPS, 1.0 - PROPENSITY_EPS);
        sum += if ai == 1.0 { yi / e } else { -yi / (1.0 - e) };
    }
    (sum / data.n() as f64, violations)
}

/// Inverse-probability-weighting estimator: logistic propensity on (1, X),
/// Horvitz-Thompson contrast. Propensities outside `(1e-6, 1 - 1e-6)` raise
/// a positivity warning in the diagnostics but the estimate is still
/// returned. Standard errors come from the bootstrap when a configuration is
/// supplied.
pub fn naive_ipw(data: &Dataset, bootstrap_cfg: Option<&BootstrapConfig>) -> Result<EstimateResult> {
    let (gamma, converged, iterations) = fit_propensity(data)?;
    let (tau, violations) = horvitz_thompson(data, &gamma);
    let mut result = EstimateResult::new(EstimatorKind::NaiveIpw, tau, data.n());
    result.converged = converged;
    result.note("iterations", iterations as f64);
    result.note("positivity_violations", violations as f64);
    if let Some(cfg) = bootstrap_cfg {
        let replicated = bootstrap(data, |d| naive_ipw(d, None), cfg)?;
        result.se = replicated.se;
        result.ci_low = replicated.ci_low;
        result.ci_high = replicated.ci_high;
        for (k, v) in replicated.diagnostics {
            result.diagnostics.insert(k, v);
        }
    }
    Ok(result)
}
