//! Two-stage linear estimator: regress each W column on (1, Z, A, X), then
//! regress Y on (1, W-hat, A, X) and read off the treatment coefficient.
//!
//! With a linear outcome bridge and the default instrument vector this
//! reproduces the direct moment solve exactly: the first-stage fitted values
//! span the instrument space, so the second-stage orthogonality conditions
//! are linear combinations of the bridge estimating equations. Standard
//! errors stack both stages (and the tau reading) into one moment system so
//! first-stage uncertainty propagates.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::moments::{condition_estimate, sandwich_vcov, MomentSystem, COND_LIMIT};

use super::{EstimateResult, EstimatorKind};

struct Design {
    /// Column indices of the stage-1 design (1, Z..., A, X...); the leading
    /// entry marks the intercept with `usize::MAX`.
    stage1_idx: Vec<usize>,
    w_idx: Vec<usize>,
    y_idx: usize,
    a_idx: usize,
    x_idx: Vec<usize>,
}

const INTERCEPT: usize = usize::MAX;

/// Stack-scratch bound on the per-stage design dimension.
const MAX_STAGE_DIM: usize = 64;

impl Design {
    fn build(data: &Dataset) -> Design {
        let roles = data.roles();
        let mut stage1_idx = vec![INTERCEPT];
        for z in &roles.treatment_proxies {
            stage1_idx.push(data.col_index(z).expect("validated role"));
        }
        let a_idx = data.col_index(&roles.treatment).expect("validated role");
        stage1_idx.push(a_idx);
        let mut x_idx = Vec::new();
        for x in &roles.covariates {
            x_idx.push(data.col_index(x).expect("validated role"));
        }
        stage1_idx.extend(&x_idx);
        let w_idx = roles
            .outcome_proxies
            .iter()
            .map(|w| data.col_index(w).expect("validated role"))
            .collect();
        Design {
            stage1_idx,
            w_idx,
            y_idx: data.col_index(&roles.outcome).expect("validated role"),
            a_idx,
            x_idx,
        }
    }

    #[inline]
    fn stage1_row(&self, data: &Dataset, row: usize, out: &mut [f64]) {
        for (o, &idx) in out.iter_mut().zip(&self.stage1_idx) {
            *o = if idx == INTERCEPT { 1.0 } else { data.value(idx, row) };
        }
    }
}

fn solve_normal_equations(
    data: &Dataset,
    design: &Design,
    targets: &[usize],
    context: &str,
) -> Result<Vec<DVector<f64>>> {
    let d1 = design.stage1_idx.len();
    let mut xtx = DMatrix::<f64>::zeros(d1, d1);
    let mut xty: Vec<DVector<f64>> = targets.iter().map(|_| DVector::zeros(d1)).collect();
    let mut c = vec![0.0; d1];
    for row in 0..data.n() {
        design.stage1_row(data, row, &mut c);
        for i in 0..d1 {
            for j in 0..=i {
                xtx[(i, j)] += c[i] * c[j];
            }
            for (k, &t) in targets.iter().enumerate() {
                xty[k][i] += c[i] * data.value(t, row);
            }
        }
    }
    for i in 0..d1 {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    let cond = condition_estimate(&xtx);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::RankDeficient {
            context: context.to_string(),
            condition: cond,
        });
    }
    let lu = xtx.lu();
    let mut out = Vec::with_capacity(targets.len());
    for rhs in xty {
        out.push(lu.solve(&rhs).ok_or_else(|| Error::RankDeficient {
            context: context.to_string(),
            condition: cond,
        })?);
    }
    Ok(out)
}

/// Builds the stacked moment system over (stage-1 coefficients for each W
/// column, stage-2 coefficients, tau). Exactly identified by construction;
/// this is the inference system behind [`two_stage_linear`].
pub fn two_stage_moment_system(data: &Dataset) -> MomentSystem {
    let design = Design::build(data);
    let d1 = design.stage1_idx.len();
    let r = design.w_idx.len();
    let d2 = 2 + r + design.x_idx.len();
    let dim = r * d1 + d2 + 1;
    let a_pos_in_g = 1 + r; // g = (1, W-hat..., A, X...)
    assert!(d1 <= MAX_STAGE_DIM && d2 <= MAX_STAGE_DIM, "too many role columns");

    let design_r = Design::build(data);
    let residual = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let mut c = [0.0; MAX_STAGE_DIM];
        let c = &mut c[..d1];
        design_r.stage1_row(d, row, c);
        // Stage-1 moments per W column; g = (1, W-hat..., A, X...).
        let mut g = [0.0; MAX_STAGE_DIM];
        let g = &mut g[..d2];
        g[0] = 1.0;
        for j in 0..r {
            let phi = &theta[j * d1..(j + 1) * d1];
            let fitted: f64 = phi.iter().zip(c.iter()).map(|(p, v)| p * v).sum();
            g[1 + j] = fitted;
            let resid = d.value(design_r.w_idx[j], row) - fitted;
            for l in 0..d1 {
                out[j * d1 + l] = resid * c[l];
            }
        }
        g[1 + r] = d.value(design_r.a_idx, row);
        for (k, &xi) in design_r.x_idx.iter().enumerate() {
            g[2 + r + k] = d.value(xi, row);
        }
        let eta = &theta[r * d1..r * d1 + d2];
        let fitted: f64 = eta.iter().zip(g.iter()).map(|(e, v)| e * v).sum();
        let resid2 = d.value(design_r.y_idx, row) - fitted;
        for (i, gv) in g.iter().enumerate() {
            out[r * d1 + i] = resid2 * gv;
        }
        // Tau reading.
        out[dim - 1] = theta[dim - 1] - eta[a_pos_in_g];
    };

    let design_j = Design::build(data);
    let jacobian = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        for v in out.iter_mut() {
            *v = 0.0;
        }
        let mut c = [0.0; MAX_STAGE_DIM];
        let c = &mut c[..d1];
        design_j.stage1_row(d, row, c);
        let mut g = [0.0; MAX_STAGE_DIM];
        let g = &mut g[..d2];
        g[0] = 1.0;
        for j in 0..r {
            let phi = &theta[j * d1..(j + 1) * d1];
            g[1 + j] = phi.iter().zip(c.iter()).map(|(p, v)| p * v).sum();
        }
        g[1 + r] = d.value(design_j.a_idx, row);
        for (k, &xi) in design_j.x_idx.iter().enumerate() {
            g[2 + r + k] = d.value(xi, row);
        }
        let eta = &theta[r * d1..r * d1 + d2];
        let fitted: f64 = eta.iter().zip(g.iter()).map(|(e, v)| e * v).sum();
        let resid2 = d.value(design_j.y_idx, row) - fitted;

        // Stage-1 blocks: d m1_j / d phi_j = -c c'.
        for j in 0..r {
            for i in 0..d1 {
                for l in 0..d1 {
                    out[(j * d1 + i) * dim + j * d1 + l] = -c[i] * c[l];
                }
            }
        }
        // Stage-2 block w.r.t. eta: -g g'.
        for i in 0..d2 {
            for l in 0..d2 {
                out[(r * d1 + i) * dim + r * d1 + l] = -g[i] * g[l];
            }
        }
        // Stage-2 cross block w.r.t. phi_j: the fitted value W-hat_j enters
        // both the residual (through eta_{w_j}) and the instrument slot 1+j.
        for j in 0..r {
            let eta_wj = eta[1 + j];
            for i in 0..d2 {
                for l in 0..d1 {
                    let mut v = -eta_wj * c[l] * g[i];
                    if i == 1 + j {
                        v += resid2 * c[l];
                    }
                    out[(r * d1 + i) * dim + j * d1 + l] = v;
                }
            }
        }
        // Tau row.
        out[(dim - 1) * dim + r * d1 + a_pos_in_g] = -1.0;
        out[(dim - 1) * dim + dim - 1] = 1.0;
    };

    MomentSystem::new("two_stage_linear", dim, dim, residual, jacobian)
}

/// Two-stage linear ATE estimator with stacked-sandwich standard errors.
pub fn two_stage_linear(data: &Dataset) -> Result<EstimateResult> {
    let design = Design::build(data);
    let d1 = design.stage1_idx.len();
    let r = design.w_idx.len();
    if data.n() <= d1 + r + 1 {
        return Err(Error::Validation(format!(
            "two_stage_linear needs more than {} rows, got {}",
            d1 + r + 1,
            data.n()
        )));
    }

    // Stage 1: each W column on (1, Z, A, X).
    let stage1 = solve_normal_equations(data, &design, &design.w_idx, "two_stage_linear stage 1")?;

    // Stage 2: Y on (1, W-hat, A, X), assembled explicitly.
    let d2 = 2 + r + design.x_idx.len();
    let mut xtx = DMatrix::<f64>::zeros(d2, d2);
    let mut xty = DVector::<f64>::zeros(d2);
    let mut c = vec![0.0; d1];
    let mut g = vec![0.0; d2];
    for row in 0..data.n() {
        design.stage1_row(data, row, &mut c);
        g[0] = 1.0;
        for j in 0..r {
            g[1 + j] = stage1[j].iter().zip(&c).map(|(p, v)| p * v).sum();
        }
        g[1 + r] = data.value(design.a_idx, row);
        for (k, &xi) in design.x_idx.iter().enumerate() {
            g[2 + r + k] = data.value(xi, row);
        }
        let y = data.value(design.y_idx, row);
        for i in 0..d2 {
            xty[i] += g[i] * y;
            for j in 0..=i {
                xtx[(i, j)] += g[i] * g[j];
            }
        }
    }
    for i in 0..d2 {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    let cond = condition_estimate(&xtx);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::RankDeficient {
            context: "two_stage_linear stage 2".into(),
            condition: cond,
        });
    }
    let eta = xtx.lu().solve(&xty).ok_or_else(|| Error::RankDeficient {
        context: "two_stage_linear stage 2".into(),
        condition: cond,
    })?;
    let tau = eta[1 + r];

    // Stacked sandwich across both stages.
    let mut theta = Vec::with_capacity(r * d1 + d2 + 1);
    for phi in &stage1 {
        theta.extend(phi.iter());
    }
    theta.extend(eta.iter());
    theta.push(tau);
    let system = two_stage_moment_system(data);
    let vcov = sandwich_vcov(data, &system, &theta)?;
    let se = vcov[(theta.len() - 1, theta.len() - 1)].sqrt();

    let mut result = EstimateResult::new(EstimatorKind::TwoStageLinear, tau, data.n()).with_wald(se);
    result.note("condition_stage2", cond);
    Ok(result)
}
