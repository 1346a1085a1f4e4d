//! Generic estimating-equation engine: stacked moment systems, direct and
//! Gauss-Newton GMM solves, sandwich variances, and Jacobian verification.
//!
//! A [`MomentSystem`] packages a vector-valued per-row residual
//! `f(row, theta)` with its analytic Jacobian. The estimator solves
//! `P_n[f] = 0` (exactly identified) or minimizes `G_n' Omega G_n`
//! (overidentified), where `G_n(theta) = P_n[f(row, theta)]`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Condition-number limit beyond which a linear solve is treated as rank
/// deficient.
pub const COND_LIMIT: f64 = 1e12;

type RowFn = dyn Fn(&Dataset, usize, &[f64], &mut [f64]) + Send + Sync;

/// A vector-valued estimating-equation system over i.i.d. rows.
#[derive(Clone)]
pub struct MomentSystem {
    label: String,
    dim_moments: usize,
    dim_theta: usize,
    linear_in_theta: bool,
    residual: Arc<RowFn>,
    /// Row-major `dim_moments x dim_theta` Jacobian of the residual.
    jacobian: Arc<RowFn>,
}

impl std::fmt::Debug for MomentSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MomentSystem")
            .field("label", &self.label)
            .field("dim_moments", &self.dim_moments)
            .field("dim_theta", &self.dim_theta)
            .field("linear_in_theta", &self.linear_in_theta)
            .finish()
    }
}

impl MomentSystem {
    pub fn new<R, J>(
        label: impl Into<String>,
        dim_moments: usize,
        dim_theta: usize,
        residual: R,
        jacobian: J,
    ) -> Self
    where
        R: Fn(&Dataset, usize, &[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(&Dataset, usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(
            dim_moments >= dim_theta,
            "moment system needs at least as many moments as parameters"
        );
        MomentSystem {
            label: label.into(),
            dim_moments,
            dim_theta,
            linear_in_theta: false,
            residual: Arc::new(residual),
            jacobian: Arc::new(jacobian),
        }
    }

    /// Marks the system as linear in theta (constant Jacobian), enabling the
    /// direct solve path.
    pub fn linear(mut self) -> Self {
        self.linear_in_theta = true;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_moments(&self) -> usize {
        self.dim_moments
    }

    pub fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    pub fn is_linear(&self) -> bool {
        self.linear_in_theta
    }

    pub fn residual_into(&self, data: &Dataset, row: usize, theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.dim_theta);
        debug_assert_eq!(out.len(), self.dim_moments);
        (self.residual)(data, row, theta, out);
    }

    pub fn jacobian_into(&self, data: &Dataset, row: usize, theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_moments * self.dim_theta);
        (self.jacobian)(data, row, theta, out);
    }

    /// `G_n(theta) = P_n[f(row, theta)]`.
    pub fn mean_residual(&self, data: &Dataset, theta: &[f64]) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim_moments);
        let mut buf = vec![0.0; self.dim_moments];
        for row in 0..data.n() {
            self.residual_into(data, row, theta, &mut buf);
            for (s, b) in sum.iter_mut().zip(&buf) {
                *s += b;
            }
        }
        sum / data.n() as f64
    }

    /// `P_n[df/dtheta]`.
    pub fn mean_jacobian(&self, data: &Dataset, theta: &[f64]) -> DMatrix<f64> {
        let (m, t) = (self.dim_moments, self.dim_theta);
        let mut sum = DMatrix::zeros(m, t);
        let mut buf = vec![0.0; m * t];
        for row in 0..data.n() {
            self.jacobian_into(data, row, theta, &mut buf);
            for i in 0..m {
                for j in 0..t {
                    sum[(i, j)] += buf[i * t + j];
                }
            }
        }
        sum / data.n() as f64
    }

    /// One-pass mean residual and mean Jacobian.
    fn mean_both(&self, data: &Dataset, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (m, t) = (self.dim_moments, self.dim_theta);
        let mut g = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, t);
        let mut rbuf = vec![0.0; m];
        let mut jbuf = vec![0.0; m * t];
        for row in 0..data.n() {
            self.residual_into(data, row, theta, &mut rbuf);
            self.jacobian_into(data, row, theta, &mut jbuf);
            for i in 0..m {
                g[i] += rbuf[i];
                for k in 0..t {
                    j[(i, k)] += jbuf[i * t + k];
                }
            }
        }
        let n = data.n() as f64;
        (g / n, j / n)
    }

    /// `B = P_n[f f']` at theta.
    pub fn meat(&self, data: &Dataset, theta: &[f64]) -> DMatrix<f64> {
        let m = self.dim_moments;
        let mut sum = DMatrix::zeros(m, m);
        let mut buf = vec![0.0; m];
        for row in 0..data.n() {
            self.residual_into(data, row, theta, &mut buf);
            for i in 0..m {
                for j in 0..=i {
                    sum[(i, j)] += buf[i] * buf[j];
                }
            }
        }
        let n = data.n() as f64;
        for i in 0..m {
            for j in 0..=i {
                let v = sum[(i, j)] / n;
                sum[(i, j)] = v;
                sum[(j, i)] = v;
            }
        }
        sum
    }
}

/// GMM weighting matrix.
#[derive(Debug, Clone, Default)]
pub enum Weighting {
    #[default]
    Identity,
    /// Symmetric positive semidefinite user weighting.
    Custom(DMatrix<f64>),
}

/// Solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Direct solve for systems linear in theta; Gauss-Newton otherwise.
    #[default]
    Auto,
    DirectLinear,
    GaussNewton,
}

/// Configuration of a GMM solve.
#[derive(Debug, Clone)]
pub struct GmmConfig {
    pub weighting: Weighting,
    pub solver: Solver,
    pub max_iter: usize,
    /// Convergence tolerance on the max-norm of the objective gradient.
    pub tol: f64,
    /// Starting parameter vector; zeros when absent.
    pub theta0: Option<Vec<f64>>,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            weighting: Weighting::Identity,
            solver: Solver::Auto,
            max_iter: 200,
            tol: 1e-10,
            theta0: None,
        }
    }
}

impl GmmConfig {
    fn validate(&self, dim_moments: usize) -> Result<()> {
        if self.tol <= 0.0 {
            return Err(Error::Config("GMM tolerance must be positive".into()));
        }
        if let Weighting::Custom(w) = &self.weighting {
            if w.nrows() != dim_moments || w.ncols() != dim_moments {
                return Err(Error::Config(format!(
                    "weighting matrix must be {dim_moments}x{dim_moments}"
                )));
            }
            let asym = (w - w.transpose()).amax();
            if asym > 1e-10 * (1.0 + w.amax()) {
                return Err(Error::Config("weighting matrix must be symmetric".into()));
            }
        }
        Ok(())
    }

    fn weight(&self, dim: usize) -> DMatrix<f64> {
        match &self.weighting {
            Weighting::Identity => DMatrix::identity(dim, dim),
            Weighting::Custom(w) => w.clone(),
        }
    }
}

/// Outcome of a GMM solve.
#[derive(Debug, Clone)]
pub struct GmmResult {
    pub theta_hat: DVector<f64>,
    /// Final value of `G' Omega G`.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Bread: `P_n[df/dtheta]` at the solution.
    pub bread: DMatrix<f64>,
    /// Meat: `P_n[f f']` at the solution.
    pub meat: DMatrix<f64>,
    /// Sandwich covariance of theta_hat; `None` when the bread is singular.
    pub vcov: Option<DMatrix<f64>>,
    /// Condition estimate of the last solved normal-equation matrix.
    pub condition: f64,
}

/// Ratio of extreme singular values; infinite for numerically rank-deficient
/// matrices.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= max * f64::EPSILON || min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn solve_square(m: &DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let cond = condition_estimate(m);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::RankDeficient {
            context: context.to_string(),
            condition: cond,
        });
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::RankDeficient {
            context: context.to_string(),
            condition: cond,
        })
}

fn symmetrize(mut v: DMatrix<f64>) -> DMatrix<f64> {
    let t = v.transpose();
    v += t;
    v /= 2.0;
    for i in 0..v.nrows() {
        if v[(i, i)] < 0.0 {
            v[(i, i)] = 0.0;
        }
    }
    v
}

/// Sandwich covariance `A^{-1} B A^{-T} / n` for an exactly identified
/// solution, or the weighted-GMM analogue for overidentified systems.
fn vcov_at(
    bread: &DMatrix<f64>,
    meat: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    n: usize,
    exactly_identified: bool,
) -> Option<DMatrix<f64>> {
    let nf = n as f64;
    if exactly_identified {
        let inv = bread.clone().lu().try_inverse()?;
        Some(symmetrize(&inv * meat * inv.transpose() / nf))
    } else {
        // (J'WJ)^{-1} J'W B W J (J'WJ)^{-1} / n
        let jw = bread.transpose() * omega;
        let m = &jw * bread;
        let m_inv = m.lu().try_inverse()?;
        let core = &jw * meat * jw.transpose();
        Some(symmetrize(&m_inv * core * &m_inv.transpose() / nf))
    }
}

/// Solves the empirical moment conditions of `system` on `data`.
///
/// Exactly identified linear systems are solved directly; otherwise
/// Gauss-Newton with step halving minimizes the quadratic form, falling back
/// to a gradient step when the normal equations are ill-conditioned.
/// Hitting the iteration cap yields a result with `converged = false`, not
/// an error.
pub fn solve_gmm(data: &Dataset, system: &MomentSystem, config: &GmmConfig) -> Result<GmmResult> {
    if data.n() == 0 {
        return Err(Error::Validation("empty dataset".into()));
    }
    config.validate(system.dim_moments())?;
    let solver = match config.solver {
        Solver::Auto => {
            if system.is_linear() {
                Solver::DirectLinear
            } else {
                Solver::GaussNewton
            }
        }
        s => s,
    };
    match solver {
        Solver::DirectLinear => solve_direct_linear(data, system, config),
        Solver::GaussNewton => solve_gauss_newton(data, system, config),
        Solver::Auto => unreachable!(),
    }
}

fn solve_direct_linear(
    data: &Dataset,
    system: &MomentSystem,
    config: &GmmConfig,
) -> Result<GmmResult> {
    let t = system.dim_theta();
    let m = system.dim_moments();
    let zero = vec![0.0; t];
    let (g0, jbar) = system.mean_both(data, &zero);

    // Linearity check: G(theta) must equal G(0) + J theta.
    let probe: Vec<f64> = (0..t).map(|j| 0.31 + 0.17 * (j as f64 % 3.0)).collect();
    let g_probe = system.mean_residual(data, &probe);
    let predicted = &g0 + &jbar * DVector::from_column_slice(&probe);
    let scale = 1.0 + g_probe.amax().max(g0.amax());
    if (&g_probe - predicted).amax() > 1e-8 * scale {
        return Err(Error::Validation(format!(
            "direct_linear requires a system linear in theta ({})",
            system.label()
        )));
    }

    let omega = config.weight(m);
    let (theta, cond) = if m == t {
        let cond = condition_estimate(&jbar);
        let theta = solve_square(&jbar, &(-&g0), system.label())?;
        (theta, cond)
    } else {
        let jw = jbar.transpose() * &omega;
        let normal = &jw * &jbar;
        let cond = condition_estimate(&normal);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::RankDeficient {
                context: system.label().to_string(),
                condition: cond,
            });
        }
        let theta = solve_square(&normal, &(-(&jw * &g0)), system.label())?;
        (theta, cond)
    };

    let theta_slice: Vec<f64> = theta.iter().copied().collect();
    let g_final = system.mean_residual(data, &theta_slice);
    let objective = (g_final.transpose() * &omega * &g_final)[(0, 0)];
    let meat = system.meat(data, &theta_slice);
    let vcov = vcov_at(&jbar, &meat, &omega, data.n(), m == t);
    Ok(GmmResult {
        theta_hat: theta,
        objective,
        converged: true,
        iterations: 1,
        bread: jbar,
        meat,
        vcov,
        condition: cond,
    })
}

fn solve_gauss_newton(
    data: &Dataset,
    system: &MomentSystem,
    config: &GmmConfig,
) -> Result<GmmResult> {
    let t = system.dim_theta();
    let m = system.dim_moments();
    let omega = config.weight(m);
    let mut theta: Vec<f64> = match &config.theta0 {
        Some(t0) => {
            if t0.len() != t {
                return Err(Error::Config(format!(
                    "theta0 has length {}, expected {t}",
                    t0.len()
                )));
            }
            t0.clone()
        }
        None => vec![0.0; t],
    };

    let objective_of = |g: &DVector<f64>| (g.transpose() * &omega * g)[(0, 0)];

    let (mut g, mut jbar) = system.mean_both(data, &theta);
    let mut q = objective_of(&g);
    if !q.is_finite() {
        return Err(Error::NonFinite(format!(
            "GMM objective at starting point of {}",
            system.label()
        )));
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut last_cond = condition_estimate(&jbar);

    while iterations < config.max_iter {
        iterations += 1;
        let grad = 2.0 * jbar.transpose() * &omega * &g;
        if grad.amax() <= config.tol {
            converged = true;
            break;
        }
        let jw = jbar.transpose() * &omega;
        let normal = &jw * &jbar;
        let cond = condition_estimate(&normal);
        last_cond = cond;
        let direction = if cond.is_finite() && cond <= COND_LIMIT {
            match normal.clone().lu().solve(&(-(&jw * &g))) {
                Some(d) => d,
                None => -0.5 * &grad,
            }
        } else {
            // Ill-conditioned normal equations: fall back to a gradient step.
            -0.5 * &grad
        };

        // Step halving: accept the first step that decreases the objective.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(direction.iter())
                .map(|(v, d)| v + step * d)
                .collect();
            let g_trial = system.mean_residual(data, &trial);
            let q_trial = objective_of(&g_trial);
            if q_trial.is_finite() && q_trial < q {
                theta = trial;
                q = q_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Stalled: no decrease along the step; gradient may still be
            // above tol, so report non-convergence honestly.
            break;
        }
        let refreshed = system.mean_both(data, &theta);
        g = refreshed.0;
        jbar = refreshed.1;
    }
    // Final gradient check in case the loop exhausted max_iter right at the
    // solution.
    if !converged {
        let grad = 2.0 * jbar.transpose() * &omega * &g;
        converged = grad.amax() <= config.tol;
    }

    let meat = system.meat(data, &theta);
    let vcov = vcov_at(&jbar, &meat, &omega, data.n(), m == t);
    Ok(GmmResult {
        theta_hat: DVector::from_column_slice(&theta),
        objective: q,
        converged,
        iterations,
        bread: jbar,
        meat,
        vcov,
        condition: last_cond,
    })
}

/// Sandwich covariance `A^{-1} B A^{-T} / n` for an exactly identified system
/// at a solution `theta_hat`, with `A = P_n[df/dtheta]` and `B = P_n[f f']`.
/// The meat uses the 1/n divisor.
pub fn sandwich_vcov(
    data: &Dataset,
    system: &MomentSystem,
    theta_hat: &[f64],
) -> Result<DMatrix<f64>> {
    if system.dim_moments() != system.dim_theta() {
        return Err(Error::Validation(format!(
            "sandwich_vcov requires an exactly identified system; {} has {} moments and {} parameters",
            system.label(),
            system.dim_moments(),
            system.dim_theta()
        )));
    }
    let bread = system.mean_jacobian(data, theta_hat);
    let cond = condition_estimate(&bread);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::RankDeficient {
            context: system.label().to_string(),
            condition: cond,
        });
    }
    let meat = system.meat(data, theta_hat);
    let inv = bread.lu().try_inverse().ok_or_else(|| Error::RankDeficient {
        context: system.label().to_string(),
        condition: cond,
    })?;
    Ok(symmetrize(&inv * meat * inv.transpose() / data.n() as f64))
}

/// Compares the analytic Jacobian against central finite differences of the
/// residual at one row, with step `h_j = cbrt(eps) * max(1, |theta_j|)`.
/// Returns the worst entry-wise error relative to `max(1, |fd|)`.
pub fn check_jacobian(
    system: &MomentSystem,
    data: &Dataset,
    row: usize,
    theta: &[f64],
) -> Result<f64> {
    let m = system.dim_moments();
    let t = system.dim_theta();
    let mut base = vec![0.0; m];
    system.residual_into(data, row, theta, &mut base);
    if base.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "residual of {} at the evaluation point",
            system.label()
        )));
    }
    let mut analytic = vec![0.0; m * t];
    system.jacobian_into(data, row, theta, &mut analytic);

    let h_base = f64::EPSILON.cbrt();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut worst: f64 = 0.0;
    let mut point = theta.to_vec();
    for j in 0..t {
        let h = h_base * theta[j].abs().max(1.0);
        point[j] = theta[j] + h;
        system.residual_into(data, row, &point, &mut plus);
        point[j] = theta[j] - h;
        system.residual_into(data, row, &point, &mut minus);
        point[j] = theta[j];
        for i in 0..m {
            let fd = (plus[i] - minus[i]) / (2.0 * h);
            if !fd.is_finite() {
                return Err(Error::NonFinite(format!(
                    "finite difference of {} at entry ({i}, {j})",
                    system.label()
                )));
            }
            let err = (fd - analytic[i * t + j]).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Builds the moment system of a linear regression of `y_col` on the given
/// design columns plus an intercept: residuals `(y - x'b) x`. Shared by the
/// naive estimators and several tests.
pub fn ols_system(data: &Dataset, y_col: &str, design_cols: &[String]) -> Result<MomentSystem> {
    let y_idx = data
        .col_index(y_col)
        .ok_or_else(|| Error::MissingColumn(y_col.to_string()))?;
    let mut idx = Vec::with_capacity(design_cols.len());
    for c in design_cols {
        idx.push(
            data.col_index(c)
                .ok_or_else(|| Error::MissingColumn(c.clone()))?,
        );
    }
    let dim = idx.len() + 1;
    let idx_r = idx.clone();
    let residual = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let mut fitted = theta[0];
        for (k, &ci) in idx_r.iter().enumerate() {
            fitted += theta[k + 1] * d.value(ci, row);
        }
        let resid = d.value(y_idx, row) - fitted;
        out[0] = resid;
        for (k, &ci) in idx_r.iter().enumerate() {
            out[k + 1] = resid * d.value(ci, row);
        }
    };
    let idx_j = idx;
    let jacobian = move |d: &Dataset, row: usize, _theta: &[f64], out: &mut [f64]| {
        let mut x = vec![1.0; idx_j.len() + 1];
        for (k, &ci) in idx_j.iter().enumerate() {
            x[k + 1] = d.value(ci, row);
        }
        let t = x.len();
        for i in 0..t {
            for j in 0..t {
                out[i * t + j] = -x[i] * x[j];
            }
        }
    };
    Ok(MomentSystem::new(format!("ols[{y_col}]"), dim, dim, residual, jacobian).linear())
}
