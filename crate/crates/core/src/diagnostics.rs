//! Empirical proxy checks and necessary-condition screens.
//!
//! Partial-correlation association tests with Fisher z p-values probe
//! whether candidate proxies plausibly carry information about the
//! unobserved confounder, and a dimensionality screen checks the
//! counting condition that each proxy set has at least as many components
//! as the declared confounder dimension. Both are necessary-condition
//! checks only: no empirical procedure can establish completeness, and
//! every report carries a fixed caveat saying so.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bridges::{eval_q_checked, TreatmentBridgeSpec};
use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};

/// Fixed caveat embedded in every proxy-check report.
pub const PROXY_CHECK_CAVEAT: &str = "Association screens can support, but never establish, that a proxy carries information about the unobserved confounder: the same associations can arise from violated independence assumptions, and their absence can reflect weak confounding rather than weak proxies. These tests were run on the estimation sample without splitting. Completeness itself is untestable.";

/// Residual-on-residual partial correlation of `x` and `y` given the
/// conditioning columns (an intercept is always included).
pub fn partial_correlation(x: &[f64], y: &[f64], conditioning: &[&[f64]]) -> Result<f64> {
    let n = x.len();
    if y.len() != n || conditioning.iter().any(|c| c.len() != n) {
        return Err(Error::Validation("partial correlation inputs must share length".into()));
    }
    let d = conditioning.len() + 1;
    if n < d + 3 {
        return Err(Error::Validation("too few rows for partial correlation".into()));
    }
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut xtx_x = nalgebra::DVector::<f64>::zeros(d);
    let mut xtx_y = nalgebra::DVector::<f64>::zeros(d);
    let mut row = vec![0.0; d];
    for i in 0..n {
        row[0] = 1.0;
        for (k, c) in conditioning.iter().enumerate() {
            row[1 + k] = c[i];
        }
        for a in 0..d {
            xtx_x[a] += row[a] * x[i];
            xtx_y[a] += row[a] * y[i];
            for b in 0..=a {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    let cond = crate::moments::condition_estimate(&xtx);
    if !cond.is_finite() || cond > crate::moments::COND_LIMIT {
        return Err(Error::RankDeficient {
            context: "partial correlation conditioning set".into(),
            condition: cond,
        });
    }
    let lu = xtx.lu();
    let beta_x = lu.solve(&xtx_x).ok_or_else(|| Error::RankDeficient {
        context: "partial correlation conditioning set".into(),
        condition: cond,
    })?;
    let beta_y = lu.solve(&xtx_y).ok_or_else(|| Error::RankDeficient {
        context: "partial correlation conditioning set".into(),
        condition: cond,
    })?;

    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        row[0] = 1.0;
        for (k, c) in conditioning.iter().enumerate() {
            row[1 + k] = c[i];
        }
        let rx = x[i] - beta_x.iter().zip(&row).map(|(b, v)| b * v).sum::<f64>();
        let ry = y[i] - beta_y.iter().zip(&row).map(|(b, v)| b * v).sum::<f64>();
        sxx += rx * rx;
        syy += ry * ry;
        sxy += rx * ry;
    }
    let scale_x = x.iter().map(|v| v * v).sum::<f64>().max(1.0);
    let scale_y = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if sxx <= 1e-24 * scale_x || syy <= 1e-24 * scale_y {
        return Err(Error::Validation("degenerate (constant) column in partial correlation".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fisher z statistic and two-sided p-value for a partial correlation with
/// `s` conditioning variables: `z = atanh(r) sqrt(n - s - 3)`.
pub fn fisher_z_test(r: f64, n: usize, s: usize) -> (f64, f64) {
    let df = (n as f64 - s as f64 - 3.0).max(1.0);
    let z = r.atanh() * df.sqrt();
    let normal = Normal::standard();
    let p = 2.0 * (1.0 - normal.cdf(z.abs()));
    (z, p.clamp(0.0, 1.0))
}

/// Outcome of one association test.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TestOutcome {
    Computed { partial_correlation: f64, z: f64, p: f64 },
    Skipped { reason: String },
}

/// One proxy-check record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyTest {
    /// Identifier like `Z1~Y|A,X`.
    pub id: String,
    pub var_a: String,
    pub var_b: String,
    pub conditioning: Vec<String>,
    /// Whether this pair bears on U-relevance under the proxy independence
    /// assumptions (as opposed to being merely suggestive).
    pub informative: bool,
    pub outcome: TestOutcome,
}

/// Strength of the empirical evidence that a proxy is related to the
/// unobserved confounder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceFlag {
    /// Smallest informative p-value below 0.01.
    RelevantEvidence,
    /// Smallest informative p-value in [0.01, 0.10).
    Weak,
    /// No informative test below 0.10.
    None,
}

/// Report of all pairwise proxy association checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyCheckReport {
    pub tests: Vec<ProxyTest>,
    pub flags: BTreeMap<String, RelevanceFlag>,
    pub caveat: String,
}

fn run_test(
    data: &Dataset,
    a_name: &str,
    b_name: &str,
    conditioning: &[String],
    informative: bool,
) -> ProxyTest {
    let id = format!("{a_name}~{b_name}|{}", conditioning.join(","));
    let a = data.col(a_name).expect("validated role");
    let b = data.col(b_name).expect("validated role");
    let cond_cols: Vec<&[f64]> = conditioning
        .iter()
        .map(|c| data.col(c).expect("validated role"))
        .collect();
    let outcome = match partial_correlation(a, b, &cond_cols) {
        Ok(r) => {
            let (z, p) = fisher_z_test(r, data.n(), conditioning.len());
            TestOutcome::Computed {
                partial_correlation: r,
                z,
                p,
            }
        }
        Err(e) => TestOutcome::Skipped { reason: e.to_string() },
    };
    ProxyTest {
        id,
        var_a: a_name.to_string(),
        var_b: b_name.to_string(),
        conditioning: conditioning.to_vec(),
        informative,
        outcome,
    }
}

/// Runs the pairwise partial-correlation screens:
/// each `Z_j ~ Y | (A, X)`, `W_j ~ A | X`, and `Z_j ~ W_k | (A, X)` as
/// evidence bearing on U-relevance (valid under the proxy independence
/// assumptions), plus the merely suggestive `Z_j ~ A | X` and
/// `W_j ~ Y | (A, X)`. Constant columns cause individual tests to be
/// skipped with a reason, not a hard failure.
pub fn proxy_checks(data: &Dataset) -> Result<ProxyCheckReport> {
    let roles = data.roles().clone();
    let p = roles.covariates.len();
    let q = roles.treatment_proxies.len();
    let r = roles.outcome_proxies.len();
    if data.n() <= p + q + r + 5 {
        return Err(Error::Validation(format!(
            "proxy checks need more than {} rows, got {}",
            p + q + r + 5,
            data.n()
        )));
    }
    let mut cond_ax = vec![roles.treatment.clone()];
    cond_ax.extend(roles.covariates.iter().cloned());
    let cond_x = roles.covariates.clone();

    let mut tests = Vec::new();
    for z in &roles.treatment_proxies {
        tests.push(run_test(data, z, &roles.outcome, &cond_ax, true));
    }
    for w in &roles.outcome_proxies {
        tests.push(run_test(data, w, &roles.treatment, &cond_x, true));
    }
    for z in &roles.treatment_proxies {
        for w in &roles.outcome_proxies {
            tests.push(run_test(data, z, w, &cond_ax, true));
        }
    }
    for z in &roles.treatment_proxies {
        tests.push(run_test(data, z, &roles.treatment, &cond_x, false));
    }
    for w in &roles.outcome_proxies {
        tests.push(run_test(data, w, &roles.outcome, &cond_ax, false));
    }

    let mut flags = BTreeMap::new();
    for proxy in roles.treatment_proxies.iter().chain(&roles.outcome_proxies) {
        let mut min_p: Option<f64> = None;
        for t in &tests {
            if !t.informative || (t.var_a != *proxy && t.var_b != *proxy) {
                continue;
            }
            if let TestOutcome::Computed { p, .. } = t.outcome {
                min_p = Some(min_p.map_or(p, |m: f64| m.min(p)));
            }
        }
        let flag = match min_p {
            Some(p) if p < 0.01 => RelevanceFlag::RelevantEvidence,
            Some(p) if p < 0.10 => RelevanceFlag::Weak,
            _ => RelevanceFlag::None,
        };
        flags.insert(proxy.clone(), flag);
    }

    Ok(ProxyCheckReport {
        tests,
        flags,
        caveat: PROXY_CHECK_CAVEAT.to_string(),
    })
}

/// Verdict of a necessary-condition check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NecessaryConditionMet,
    Violated,
}

/// Counting screen: each identification path needs its proxy set to have at
/// least as many components as the declared confounder dimension. Meeting
/// the condition proves nothing; failing it rules the path out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionalityScreen {
    pub declared_u_dim: usize,
    pub z_dim: usize,
    pub w_dim: usize,
    /// Outcome-bridge path: needs dim(Z) >= dim(U).
    pub outcome_bridge_path: Verdict,
    /// Treatment-bridge path: needs dim(W) >= dim(U).
    pub treatment_bridge_path: Verdict,
    pub note: String,
}

pub fn dimensionality_screen(roles: &ColumnRoles, declared_u_dim: usize) -> Result<DimensionalityScreen> {
    if declared_u_dim == 0 {
        return Err(Error::Config("declared confounder dimension must be at least 1".into()));
    }
    let z_dim = roles.treatment_proxies.len();
    let w_dim = roles.outcome_proxies.len();
    let verdict = |dim: usize| {
        if dim >= declared_u_dim {
            Verdict::NecessaryConditionMet
        } else {
            Verdict::Violated
        }
    };
    Ok(DimensionalityScreen {
        declared_u_dim,
        z_dim,
        w_dim,
        outcome_bridge_path: verdict(z_dim),
        treatment_bridge_path: verdict(w_dim),
        note: "Relative dimensionality is necessary, not sufficient: completeness of a proxy set for the confounder cannot be established empirically.".into(),
    })
}

/// Per-arm weight summary for a fitted treatment bridge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmWeights {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Effective sample size `(sum w)^2 / sum w^2`.
    pub ess: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub treated: ArmWeights,
    pub control: ArmWeights,
    pub clamped_exponents: usize,
}

/// Summarizes the fitted weights `q(Z, A, X; phi)` per treatment arm.
pub fn weight_diagnostics(data: &Dataset, q_spec: &TreatmentBridgeSpec) -> Result<WeightDiagnostics> {
    let a = data.treatment();
    let mut clamps = 0usize;
    let mut per_arm = [Vec::new(), Vec::new()];
    for row in 0..data.n() {
        let (q, clamped) = eval_q_checked(q_spec, data, row, None)?;
        if clamped {
            clamps += 1;
        }
        per_arm[a[row] as usize].push(q);
    }
    let summarize = |w: &[f64]| -> ArmWeights {
        if w.is_empty() {
            return ArmWeights {
                n: 0,
                min: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
                ess: 0.0,
            };
        }
        let sum: f64 = w.iter().sum();
        let sumsq: f64 = w.iter().map(|v| v * v).sum();
        ArmWeights {
            n: w.len(),
            min: w.iter().copied().fold(f64::INFINITY, f64::min),
            max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: sum / w.len() as f64,
            ess: sum * sum / sumsq,
        }
    };
    Ok(WeightDiagnostics {
        treated: summarize(&per_arm[1]),
        control: summarize(&per_arm[0]),
        clamped_exponents: clamps,
    })
}
