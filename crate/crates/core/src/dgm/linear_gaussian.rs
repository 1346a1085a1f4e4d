//! Linear-Gaussian simulation model with a latent confounder.
//!
//! Factorization of the default (`OnXOnly`) configuration:
//!
//! ```text
//! X ~ N(0, 1)
//! A | X ~ Bernoulli(expit(alpha0 + alpha_x X))
//! U | A, X ~ N(mu0 + mu_a A + mu_x X, sigma_u^2)
//! (Z, W) | U, A, X ~ MVN([theta0 + theta_a A + theta_u U + theta_x X,
//!                          omega0 + omega_a A + omega_u U + omega_x X],
//!                         [[sigma_z^2, sigma_zw], [sigma_zw, sigma_w^2]])
//! Y | A, X, U, Z, W ~ N(beta0 + beta_a A + beta_u U + beta_x X
//!                        + beta_z Z + beta_w W, sigma_y^2)
//! ```
//!
//! Causally, U is a latent common cause of A and Y; the statistical model of
//! U given (A, X) encodes their observational dependence. Under an
//! intervention on A, the only directed paths into Y are the direct effect
//! and the paths through Z and W, so the true ATE has the closed form
//! `beta_a + beta_z theta_a + beta_w omega_a`.
//!
//! The `OnUzwx` variation generates proxies and confounder before treatment
//! and assigns A by a logistic model in (U, Z, X); its parametric bridge
//! functions have no simple closed form, which is exactly what it is for:
//! demonstrating parametric-misspecification bias. Its true ATE is computed
//! by an interventional Monte Carlo pass with common random numbers.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{holds_if, Assumption, AssumptionStatus, TruthRecord};
use crate::bridges::expit;
use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};
use crate::rng;

/// How treatment assignment is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TreatmentConditioning {
    /// `A | X` logistic; proxies and U drawn after treatment (the reference
    /// factorization).
    #[default]
    OnXOnly,
    /// `A | U, Z, W, X` logistic with proxies drawn before treatment.
    /// Requires `mu_a = theta_a = omega_a = 0`.
    OnUzwx { alpha_u: f64, alpha_z: f64 },
}

/// Fully parametric linear-Gaussian data-generating model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearGaussianDgm {
    pub alpha0: f64,
    pub alpha_x: f64,
    pub mu0: f64,
    pub mu_a: f64,
    pub mu_x: f64,
    pub sigma_u: f64,
    pub theta0: f64,
    pub theta_a: f64,
    pub theta_u: f64,
    pub theta_x: f64,
    pub sigma_z: f64,
    pub omega0: f64,
    pub omega_a: f64,
    pub omega_u: f64,
    pub omega_x: f64,
    pub sigma_w: f64,
    /// Residual covariance between Z and W given (U, A, X).
    pub sigma_zw: f64,
    pub beta0: f64,
    pub beta_a: f64,
    pub beta_u: f64,
    pub beta_x: f64,
    pub beta_z: f64,
    pub beta_w: f64,
    pub sigma_y: f64,
    #[serde(default)]
    pub treatment_conditioning: TreatmentConditioning,
}

impl LinearGaussianDgm {
    /// Reference valid-PCI configuration used across the test suites and the
    /// benchmark examples. The parameter values are repo choices picked so
    /// that confounding bias is large and both bridge forms are exactly
    /// correct; they do not reproduce any published study.
    pub fn reference_valid_pci() -> Self {
        LinearGaussianDgm {
            alpha0: 0.1,
            alpha_x: 0.4,
            mu0: 0.0,
            mu_a: 0.6,
            mu_x: 0.5,
            sigma_u: 1.0,
            theta0: 0.0,
            theta_a: 0.3,
            theta_u: 0.9,
            theta_x: 0.3,
            sigma_z: 1.0,
            omega0: 0.0,
            omega_a: 0.0,
            omega_u: 0.8,
            omega_x: 0.4,
            sigma_w: 1.0,
            sigma_zw: 0.0,
            beta0: 0.5,
            beta_a: 0.7,
            beta_u: 1.0,
            beta_x: 0.6,
            beta_z: 0.0,
            beta_w: 0.5,
            sigma_y: 1.0,
            treatment_conditioning: TreatmentConditioning::OnXOnly,
        }
    }

    /// Valid-PCI configuration with the covariate made strongly prognostic
    /// everywhere (doubled X loadings). Omitting X from a bridge basis on
    /// this model produces a decisive bias in that bridge's plug-in
    /// estimator, which is what the double-robustness fixtures need.
    pub fn reference_misspec_fixture() -> Self {
        let mut spec = Self::reference_valid_pci();
        spec.beta_x *= 2.0;
        spec.omega_x *= 2.0;
        spec.theta_x *= 2.0;
        spec.mu_x *= 2.0;
        spec
    }

    /// A fully independent null configuration: every column is generated
    /// with no cross-dependence. Used for diagnostics calibration.
    pub fn reference_null() -> Self {
        LinearGaussianDgm {
            alpha0: 0.0,
            alpha_x: 0.0,
            mu0: 0.0,
            mu_a: 0.0,
            mu_x: 0.0,
            sigma_u: 1.0,
            theta0: 0.0,
            theta_a: 0.0,
            theta_u: 0.0,
            theta_x: 0.0,
            sigma_z: 1.0,
            omega0: 0.0,
            omega_a: 0.0,
            omega_u: 0.0,
            omega_x: 0.0,
            sigma_w: 1.0,
            sigma_zw: 0.0,
            beta0: 0.0,
            beta_a: 0.0,
            beta_u: 0.0,
            beta_x: 0.0,
            beta_z: 0.0,
            beta_w: 0.0,
            sigma_y: 1.0,
            treatment_conditioning: TreatmentConditioning::OnXOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_u", self.sigma_u),
            ("sigma_z", self.sigma_z),
            ("sigma_w", self.sigma_w),
            ("sigma_y", self.sigma_y),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a positive finite number")));
            }
        }
        // Positive definiteness on the correlation scale, which survives
        // tiny standard deviations without underflow.
        if self.sigma_zw != 0.0 && self.sigma_zw.abs() >= self.sigma_z * self.sigma_w {
            return Err(Error::Config(
                "(Z, W) residual covariance matrix is not positive definite".into(),
            ));
        }
        if let TreatmentConditioning::OnUzwx { .. } = self.treatment_conditioning {
            if self.mu_a != 0.0 || self.theta_a != 0.0 || self.omega_a != 0.0 {
                return Err(Error::Config(
                    "pre-treatment proxy configuration requires mu_a = theta_a = omega_a = 0"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Whether this configuration satisfies the proximal assumptions with
    /// relevant proxies and genuine confounding.
    pub fn is_valid_pci(&self) -> bool {
        let independence = self.sigma_zw == 0.0 && self.omega_a == 0.0 && self.beta_z == 0.0;
        let relevance = self.theta_u != 0.0 && self.omega_u != 0.0;
        let confounded = match self.treatment_conditioning {
            TreatmentConditioning::OnXOnly => self.mu_a != 0.0 && self.beta_u != 0.0,
            TreatmentConditioning::OnUzwx { alpha_u, .. } => alpha_u != 0.0 && self.beta_u != 0.0,
        };
        independence && relevance && confounded
    }

    fn confounded(&self) -> bool {
        // U reaches Y directly or through either proxy.
        let y_depends_on_latent = self.beta_u != 0.0
            || self.beta_w * self.omega_u != 0.0
            || self.beta_z * self.theta_u != 0.0;
        match self.treatment_conditioning {
            TreatmentConditioning::OnXOnly => self.mu_a != 0.0 && y_depends_on_latent,
            TreatmentConditioning::OnUzwx { alpha_u, alpha_z } => {
                (alpha_u != 0.0 || alpha_z != 0.0) && (y_depends_on_latent || self.beta_z != 0.0)
            }
        }
    }

    /// Ground truth for this configuration.
    ///
    /// For `OnXOnly` the ATE follows the directed paths out of A:
    /// `beta_a + beta_z theta_a + beta_w omega_a`. For `OnUzwx` no closed
    /// form is assumed; the ATE is computed by interventional Monte Carlo
    /// with common random numbers (proxies are pre-treatment there, so the
    /// per-draw contrast is constant and the average is exact).
    pub fn true_ate(&self) -> Result<TruthRecord> {
        self.validate()?;
        let ate = match self.treatment_conditioning {
            TreatmentConditioning::OnXOnly => {
                self.beta_a + self.beta_z * self.theta_a + self.beta_w * self.omega_a
            }
            TreatmentConditioning::OnUzwx { .. } => self.interventional_ate_mc(200_000, 0x70c1_e0a7e).0,
        };
        let mut flags = std::collections::BTreeMap::new();
        let a5 = self.beta_z == 0.0 && self.sigma_zw == 0.0;
        let a6 = self.omega_a == 0.0 && self.sigma_zw == 0.0;
        let z_relevant = self.theta_u != 0.0;
        let w_relevant = self.omega_u != 0.0;
        flags.insert(Assumption::Consistency, AssumptionStatus::Holds);
        flags.insert(Assumption::Positivity, AssumptionStatus::Holds);
        flags.insert(Assumption::Unconfoundedness, holds_if(!self.confounded()));
        flags.insert(Assumption::LatentPositivity, AssumptionStatus::Holds);
        flags.insert(Assumption::ZConditionalIndependence, holds_if(a5));
        flags.insert(Assumption::WConditionalIndependence, holds_if(a6));
        flags.insert(Assumption::LatentUnconfoundedness, holds_if(a5 && a6));
        // Scalar Gaussian proxies: U-relevance plus matching dimension makes
        // the completeness conditions hold (exponential-family argument), and
        // with them the bridge functions exist.
        flags.insert(Assumption::OutcomeBridgeExists, holds_if(a5 && a6 && w_relevant));
        flags.insert(Assumption::ZCompleteForU, holds_if(z_relevant));
        flags.insert(Assumption::TreatmentBridgeExists, holds_if(a5 && a6 && z_relevant));
        flags.insert(Assumption::WCompleteForU, holds_if(w_relevant));
        Ok(TruthRecord { true_ate: ate, flags })
    }

    /// Interventional Monte Carlo: draws exogenous state once per replicate,
    /// evaluates the structural outcome under `A = 1` and `A = 0` with the
    /// same noise, and averages the contrast. Returns (mean, mc standard
    /// error).
    pub fn interventional_ate_mc(&self, draws: usize, seed: u64) -> (f64, f64) {
        let mut r = rng::from_seed(seed);
        let std: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let x: f64 = std.sample(&mut r);
            // Marginal confounder draw: mix over natural treatment for the
            // post-treatment factorization, plain draw otherwise.
            let u = match self.treatment_conditioning {
                TreatmentConditioning::OnXOnly => {
                    let p = expit(self.alpha0 + self.alpha_x * x);
                    let a_nat = if r.random::<f64>() < p { 1.0 } else { 0.0 };
                    self.mu0 + self.mu_a * a_nat + self.mu_x * x + self.sigma_u * std.sample(&mut r)
                }
                TreatmentConditioning::OnUzwx { .. } => {
                    self.mu0 + self.mu_x * x + self.sigma_u * std.sample(&mut r)
                }
            };
            let (e_z, e_w) = self.correlated_residuals(&mut r);
            let e_y: f64 = std.sample(&mut r);
            let mut contrast = 0.0;
            for a in [1.0, 0.0] {
                let z = self.theta0 + self.theta_a * a + self.theta_u * u + self.theta_x * x + e_z;
                let w = self.omega0 + self.omega_a * a + self.omega_u * u + self.omega_x * x + e_w;
                let y = self.beta0
                    + self.beta_a * a
                    + self.beta_u * u
                    + self.beta_x * x
                    + self.beta_z * z
                    + self.beta_w * w
                    + self.sigma_y * e_y;
                contrast += if a == 1.0 { y } else { -y };
            }
            sum += contrast;
            sumsq += contrast * contrast;
        }
        let nf = draws as f64;
        let mean = sum / nf;
        let var = (sumsq / nf - mean * mean).max(0.0);
        (mean, (var / nf).sqrt())
    }

    fn correlated_residuals(&self, r: &mut rng::Rng) -> (f64, f64) {
        let e1: f64 = StandardNormal.sample(r);
        let e2: f64 = StandardNormal.sample(r);
        if self.sigma_zw == 0.0 {
            return (self.sigma_z * e1, self.sigma_w * e2);
        }
        let rho = self.sigma_zw / (self.sigma_z * self.sigma_w);
        let e_w = self.sigma_w * (rho * e1 + (1.0 - rho * rho).max(0.0).sqrt() * e2);
        (self.sigma_z * e1, e_w)
    }
}

/// Samples `n` rows with columns X, A, U, Z, W, Y; U is tagged hidden.
/// Deterministic given the seed.
pub fn sample_linear_gaussian(spec: &LinearGaussianDgm, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut r = rng::from_seed(seed);
    let std: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let mut x_col = Vec::with_capacity(n);
    let mut a_col = Vec::with_capacity(n);
    let mut u_col = Vec::with_capacity(n);
    let mut z_col = Vec::with_capacity(n);
    let mut w_col = Vec::with_capacity(n);
    let mut y_col = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = std.sample(&mut r);
        let (a, u, z, w) = match spec.treatment_conditioning {
            TreatmentConditioning::OnXOnly => {
                let p = expit(spec.alpha0 + spec.alpha_x * x);
                let a = if r.random::<f64>() < p { 1.0 } else { 0.0 };
                let u = spec.mu0 + spec.mu_a * a + spec.mu_x * x + spec.sigma_u * std.sample(&mut r);
                let (e_z, e_w) = spec.correlated_residuals(&mut r);
                let z = spec.theta0 + spec.theta_a * a + spec.theta_u * u + spec.theta_x * x + e_z;
                let w = spec.omega0 + spec.omega_a * a + spec.omega_u * u + spec.omega_x * x + e_w;
                (a, u, z, w)
            }
            TreatmentConditioning::OnUzwx { alpha_u, alpha_z } => {
                let u = spec.mu0 + spec.mu_x * x + spec.sigma_u * std.sample(&mut r);
                let (e_z, e_w) = spec.correlated_residuals(&mut r);
                let z = spec.theta0 + spec.theta_u * u + spec.theta_x * x + e_z;
                let w = spec.omega0 + spec.omega_u * u + spec.omega_x * x + e_w;
                let p = expit(spec.alpha0 + alpha_u * u + spec.alpha_x * x + alpha_z * z);
                let a = if r.random::<f64>() < p { 1.0 } else { 0.0 };
                (a, u, z, w)
            }
        };
        let y = spec.beta0
            + spec.beta_a * a
            + spec.beta_u * u
            + spec.beta_x * x
            + spec.beta_z * z
            + spec.beta_w * w
            + spec.sigma_y * std.sample(&mut r);
        x_col.push(x);
        a_col.push(a);
        u_col.push(u);
        z_col.push(z);
        w_col.push(w);
        y_col.push(y);
    }
    let mut roles = ColumnRoles::scalar("Y", "A", "X", "Z", "W");
    roles.hidden = vec!["U".into()];
    Dataset::from_columns(
        vec![
            ("X".into(), x_col),
            ("A".into(), a_col),
            ("U".into(), u_col),
            ("Z".into(), z_col),
            ("W".into(), w_col),
            ("Y".into(), y_col),
        ],
        roles,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_constants_give_constant_outcome() {
        let mut spec = LinearGaussianDgm::reference_null();
        spec.beta0 = 1.0;
        spec.sigma_u = 1e-300;
        spec.sigma_z = 1e-300;
        spec.sigma_w = 1e-300;
        spec.sigma_y = 1e-300;
        let d = sample_linear_gaussian(&spec, 50, 3).unwrap();
        for &y in d.outcome() {
            assert_eq!(y, 1.0);
        }
    }

    #[test]
    fn confounding_shows_up_as_positive_a_u_correlation() {
        let mut spec = LinearGaussianDgm::reference_valid_pci();
        spec.mu_a = 0.5;
        spec.beta_u = 1.0;
        let d = sample_linear_gaussian(&spec, 100_000, 11).unwrap();
        let a = d.treatment();
        let u = d.col("U").unwrap();
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mu = u.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vu = 0.0;
        for i in 0..a.len() {
            cov += (a[i] - ma) * (u[i] - mu);
            va += (a[i] - ma).powi(2);
            vu += (u[i] - mu).powi(2);
        }
        let corr = cov / (va.sqrt() * vu.sqrt());
        assert!(corr > 0.1, "corr(A, U) = {corr}");
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let spec = LinearGaussianDgm::reference_valid_pci();
        let d1 = sample_linear_gaussian(&spec, 500, 42).unwrap();
        let d2 = sample_linear_gaussian(&spec, 500, 42).unwrap();
        for name in d1.names() {
            assert_eq!(d1.col(name).unwrap(), d2.col(name).unwrap());
        }
        let d3 = sample_linear_gaussian(&spec, 500, 43).unwrap();
        assert_ne!(d1.outcome(), d3.outcome());
    }

    #[test]
    fn true_ate_is_beta_a_for_valid_pci() {
        let spec = LinearGaussianDgm::reference_valid_pci();
        let t = spec.true_ate().unwrap();
        assert_eq!(t.true_ate, 0.7);
        assert_eq!(t.status(Assumption::Unconfoundedness), AssumptionStatus::Violated);
        assert_eq!(t.status(Assumption::ZConditionalIndependence), AssumptionStatus::Holds);
        assert_eq!(t.status(Assumption::WConditionalIndependence), AssumptionStatus::Holds);
    }

    #[test]
    fn non_positive_definite_covariance_is_rejected() {
        let mut spec = LinearGaussianDgm::reference_valid_pci();
        spec.sigma_zw = 2.0; // exceeds sigma_z * sigma_w = 1
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        assert!(sample_linear_gaussian(&spec, 10, 1).is_err());
    }

    #[test]
    fn pre_treatment_variant_requires_zero_post_treatment_loadings() {
        let mut spec = LinearGaussianDgm::reference_valid_pci();
        spec.treatment_conditioning = TreatmentConditioning::OnUzwx {
            alpha_u: 0.5,
            alpha_z: 0.3,
        };
        assert!(spec.validate().is_err());
        spec.mu_a = 0.0;
        spec.theta_a = 0.0;
        spec.omega_a = 0.0;
        assert!(spec.validate().is_ok());
        let t = spec.true_ate().unwrap();
        // Proxies are pre-treatment, so the interventional contrast is the
        // direct effect (up to float accumulation in the Monte Carlo mean).
        assert!((t.true_ate - spec.beta_a).abs() < 1e-9);
    }

    #[test]
    fn interventional_mc_matches_closed_form() {
        let mut spec = LinearGaussianDgm::reference_valid_pci();
        spec.beta_z = 0.25;
        spec.omega_a = 0.4;
        spec.beta_w = 0.5;
        let truth = spec.true_ate().unwrap().true_ate;
        let expected = spec.beta_a + spec.beta_z * spec.theta_a + spec.beta_w * spec.omega_a;
        assert!((truth - expected).abs() < 1e-12);
        let (mc, se) = spec.interventional_ate_mc(200_000, 99);
        assert!((mc - expected).abs() <= 3.0 * se + 1e-9, "mc {mc} vs {expected} (se {se})");
    }
}
