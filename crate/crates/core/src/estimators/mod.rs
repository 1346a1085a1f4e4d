//! Average-treatment-effect estimators.
//!
//! Naive comparators that assume no unobserved confounding (`naive_or`,
//! `naive_ipw`), the proximal estimators that adjust through bridge
//! functions (`proximal_g`, `two_stage_linear`, `proximal_ipw`,
//! `proximal_dr`), the saturated nonparametric estimator for fully binary
//! data, and a nonparametric bootstrap for inference.
//!
//! Every estimator is a pure function of its inputs; results carry an honest
//! `converged` flag and a diagnostics map (iterations, condition estimates,
//! weight ranges, clamp counts).

mod bootstrap;
mod naive;
mod proximal;
mod saturated;
mod two_stage;

pub use bootstrap::{bootstrap, BootstrapConfig, CiMethod};
pub use naive::{naive_ipw, naive_or, propensity_moment_system};
pub use proximal::{ate_from_q, g_moment_system, ipw_moment_system, proximal_dr, proximal_g, proximal_ipw};
pub use saturated::{saturated_binary, solve_saturated_cell};
pub use two_stage::{two_stage_linear, two_stage_moment_system};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// 97.5% standard normal quantile, for Wald 95% intervals.
pub(crate) const Z_975: f64 = 1.959963984540054;

/// Estimator identity, used in result rows and configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NaiveOr,
    NaiveIpw,
    ProximalG,
    TwoStageLinear,
    ProximalIpw,
    ProximalDr,
    SaturatedBinary,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::NaiveOr => "naive_or",
            EstimatorKind::NaiveIpw => "naive_ipw",
            EstimatorKind::ProximalG => "proximal_g",
            EstimatorKind::TwoStageLinear => "two_stage_linear",
            EstimatorKind::ProximalIpw => "proximal_ipw",
            EstimatorKind::ProximalDr => "proximal_dr",
            EstimatorKind::SaturatedBinary => "saturated_binary",
        };
        write!(f, "{s}")
    }
}

/// Point estimate with inference and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: EstimatorKind,
    pub ate_hat: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub converged: bool,
    pub n: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateResult {
    pub(crate) fn new(estimator: EstimatorKind, ate_hat: f64, n: usize) -> Self {
        EstimateResult {
            estimator,
            ate_hat,
            se: None,
            ci_low: None,
            ci_high: None,
            converged: true,
            n,
            diagnostics: BTreeMap::new(),
        }
    }

    /// Attaches a sandwich standard error and symmetric Wald 95% interval.
    pub(crate) fn with_wald(mut self, se: f64) -> Self {
        self.se = Some(se);
        self.ci_low = Some(self.ate_hat - Z_975 * se);
        self.ci_high = Some(self.ate_hat + Z_975 * se);
        self
    }

    pub(crate) fn note(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }
}
