//! Simulation model in which proxy dimensionality is insufficient: the
//! latent confounder is two-dimensional while the treatment proxy Z is
//! scalar, so completeness of Z for U fails by construction.
//!
//! Z loads on both confounder components, `Z = theta1 U1 + theta2 U2 + ...`,
//! yet the combination `g(U) = theta2 U1 - theta1 U2` is uncorrelated with Z
//! while having variance proportional to `theta1^2 + theta2^2 > 0`: a
//! nonzero function of U that Z cannot see. Estimators that rely on the
//! proxies therefore remain biased no matter the sample size.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{holds_if, Assumption, AssumptionStatus, TruthRecord};
use crate::bridges::expit;
use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};
use crate::rng;

/// Two-dimensional-confounder model with a scalar Z. Two-entry arrays hold
/// the per-component loadings `[U1, U2]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletenessFailureDgm {
    pub alpha0: f64,
    pub alpha_x: f64,
    pub mu0: [f64; 2],
    pub mu_a: [f64; 2],
    pub mu_x: [f64; 2],
    /// Shared residual sd of both confounder components.
    pub sigma_u: f64,
    pub theta0: f64,
    pub theta_a: f64,
    /// Loading of Z on U1; must be nonzero.
    pub theta1: f64,
    /// Loading of Z on U2; must be nonzero.
    pub theta2: f64,
    pub theta_x: f64,
    pub sigma_z: f64,
    pub omega0: f64,
    pub omega_u: [f64; 2],
    pub omega_x: f64,
    pub sigma_w: f64,
    pub beta0: f64,
    pub beta_a: f64,
    pub beta_u: [f64; 2],
    pub beta_x: f64,
    pub beta_w: f64,
    pub sigma_y: f64,
}

impl CompletenessFailureDgm {
    /// Reference configuration. The confounder shift under treatment has a
    /// component along the direction `(theta2, -theta1)` that the scalar Z
    /// cannot see, so every proxy-based adjustment stays biased. The
    /// treatment and covariate loadings of Z are chosen to cancel the
    /// confounder-mean contribution (`theta_a = -(theta1, theta2)'mu_a`,
    /// likewise for X), which keeps Z marginally unrelated to
    /// `g(U) = theta2 U1 - theta1 U2` exactly, as in the defining
    /// construction. Equal component sds keep g(U) conditionally
    /// uncorrelated with Z as well.
    pub fn reference() -> Self {
        let (t1, t2) = (1.0, 0.7);
        // mu_a = 0.5 (t1, t2) + 0.25 (t2, -t1): half visible, quarter hidden.
        let mu_a = [0.5 * t1 + 0.25 * t2, 0.5 * t2 - 0.25 * t1];
        let mu_x = [0.3 * t1, 0.3 * t2];
        CompletenessFailureDgm {
            alpha0: 0.0,
            alpha_x: 0.3,
            mu0: [0.0, 0.0],
            mu_a,
            mu_x,
            sigma_u: 1.0,
            theta0: 0.0,
            theta_a: -(t1 * mu_a[0] + t2 * mu_a[1]),
            theta1: t1,
            theta2: t2,
            theta_x: -(t1 * mu_x[0] + t2 * mu_x[1]),
            sigma_z: 0.7,
            omega0: 0.0,
            omega_u: [0.4, 1.1],
            omega_x: 0.3,
            sigma_w: 1.0,
            beta0: 0.3,
            beta_a: 0.5,
            beta_u: [1.2, -0.6],
            beta_x: 0.4,
            beta_w: 0.0,
            sigma_y: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta1 == 0.0 || self.theta2 == 0.0 {
            return Err(Error::Config(
                "theta1 and theta2 must be nonzero (Z must load on both confounder components)"
                    .into(),
            ));
        }
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
        Ok(())
    }

    /// The latent direction invisible to Z.
    pub fn g_u(&self, u1: f64, u2: f64) -> f64 {
        self.theta2 * u1 - self.theta1 * u2
    }

    /// Interventional Monte Carlo with common random numbers: the confounder
    /// components, Z, and W are non-descendants of A here, so the per-draw
    /// contrast is constant and the average is exact.
    pub fn interventional_ate_mc(&self, draws: usize, seed: u64) -> (f64, f64) {
        let mut r = rng::from_seed(seed);
        let std: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let x: f64 = std.sample(&mut r);
            let p = expit(self.alpha0 + self.alpha_x * x);
            let a_nat = if r.random::<f64>() < p { 1.0 } else { 0.0 };
            let u1 = self.mu0[0]
                + self.mu_a[0] * a_nat
                + self.mu_x[0] * x
                + self.sigma_u * std.sample(&mut r);
            let u2 = self.mu0[1]
                + self.mu_a[1] * a_nat
                + self.mu_x[1] * x
                + self.sigma_u * std.sample(&mut r);
            let e_z: f64 = std.sample(&mut r);
            let e_w: f64 = std.sample(&mut r);
            let e_y: f64 = std.sample(&mut r);
            let mut contrast = 0.0;
            for a in [1.0, 0.0] {
                let z = self.theta0
                    + self.theta_a * a
                    + self.theta1 * u1
                    + self.theta2 * u2
                    + self.theta_x * x
                    + self.sigma_z * e_z;
                let w = self.omega0
                    + self.omega_u[0] * u1
                    + self.omega_u[1] * u2
                    + self.omega_x * x
                    + self.sigma_w * e_w;
                let _ = z; // Z never enters the outcome here.
                let y = self.beta0
                    + self.beta_a * a
                    + self.beta_u[0] * u1
                    + self.beta_u[1] * u2
                    + self.beta_x * x
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

    /// Ground truth via the interventional Monte Carlo pass.
    pub fn true_ate(&self) -> Result<TruthRecord> {
        self.validate()?;
        let ate = self.interventional_ate_mc(200_000, 0x0c0e_f4a1).0;
        let confounded =
            (self.mu_a[0] != 0.0 || self.mu_a[1] != 0.0) && (self.beta_u[0] != 0.0 || self.beta_u[1] != 0.0);
        let mut flags = std::collections::BTreeMap::new();
        flags.insert(Assumption::Consistency, AssumptionStatus::Holds);
        flags.insert(Assumption::Positivity, AssumptionStatus::Holds);
        flags.insert(Assumption::Unconfoundedness, holds_if(!confounded));
        flags.insert(Assumption::LatentPositivity, AssumptionStatus::Holds);
        flags.insert(Assumption::ZConditionalIndependence, AssumptionStatus::Holds);
        flags.insert(Assumption::WConditionalIndependence, AssumptionStatus::Holds);
        flags.insert(Assumption::LatentUnconfoundedness, AssumptionStatus::Holds);
        // dim(Z) = 1 < dim(U) = 2: the relative dimensionality necessary
        // condition fails, so Z cannot be complete for U.
        flags.insert(Assumption::ZCompleteForU, AssumptionStatus::Violated);
        flags.insert(Assumption::OutcomeBridgeExists, AssumptionStatus::NotApplicable);
        flags.insert(
            Assumption::WCompleteForU,
            holds_if(false), // scalar W against two-dimensional U
        );
        flags.insert(Assumption::TreatmentBridgeExists, AssumptionStatus::NotApplicable);
        Ok(TruthRecord { true_ate: ate, flags })
    }
}

/// Samples `n` rows with columns X, A, U1, U2, Z, W, Y; both confounder
/// components are tagged hidden. Deterministic given the seed.
pub fn sample_completeness_failure(
    spec: &CompletenessFailureDgm,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut r = rng::from_seed(seed);
    let std: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let mut cols: [Vec<f64>; 7] = Default::default();
    for _ in 0..n {
        let x: f64 = std.sample(&mut r);
        let p = expit(spec.alpha0 + spec.alpha_x * x);
        let a = if r.random::<f64>() < p { 1.0 } else { 0.0 };
        let u1 = spec.mu0[0] + spec.mu_a[0] * a + spec.mu_x[0] * x + spec.sigma_u * std.sample(&mut r);
        let u2 = spec.mu0[1] + spec.mu_a[1] * a + spec.mu_x[1] * x + spec.sigma_u * std.sample(&mut r);
        let z = spec.theta0
            + spec.theta_a * a
            + spec.theta1 * u1
            + spec.theta2 * u2
            + spec.theta_x * x
            + spec.sigma_z * std.sample(&mut r);
        let w = spec.omega0
            + spec.omega_u[0] * u1
            + spec.omega_u[1] * u2
            + spec.omega_x * x
            + spec.sigma_w * std.sample(&mut r);
        let y = spec.beta0
            + spec.beta_a * a
            + spec.beta_u[0] * u1
            + spec.beta_u[1] * u2
            + spec.beta_x * x
            + spec.beta_w * w
            + spec.sigma_y * std.sample(&mut r);
        cols[0].push(x);
        cols[1].push(a);
        cols[2].push(u1);
        cols[3].push(u2);
        cols[4].push(z);
        cols[5].push(w);
        cols[6].push(y);
    }
    let [x_col, a_col, u1_col, u2_col, z_col, w_col, y_col] = cols;
    let mut roles = ColumnRoles::scalar("Y", "A", "X", "Z", "W");
    roles.hidden = vec!["U1".into(), "U2".into()];
    Dataset::from_columns(
        vec![
            ("X".into(), x_col),
            ("A".into(), a_col),
            ("U1".into(), u1_col),
            ("U2".into(), u2_col),
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

    fn simple_regression_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for i in 0..x.len() {
            sxx += (x[i] - mx) * (x[i] - mx);
            sxy += (x[i] - mx) * (y[i] - my);
        }
        let slope = sxy / sxx;
        let mut rss = 0.0;
        for i in 0..x.len() {
            let fitted = my + slope * (x[i] - mx);
            rss += (y[i] - fitted) * (y[i] - fitted);
        }
        let se = (rss / (n - 2.0) / sxx).sqrt();
        (slope, se)
    }

    #[test]
    fn hidden_direction_is_unpredictable_from_z() {
        let spec = CompletenessFailureDgm::reference();
        let d = sample_completeness_failure(&spec, 100_000, 17).unwrap();
        let u1 = d.col("U1").unwrap();
        let u2 = d.col("U2").unwrap();
        let z = d.col("Z").unwrap();
        let g: Vec<f64> = u1
            .iter()
            .zip(u2)
            .map(|(&a, &b)| spec.g_u(a, b))
            .collect();
        let (slope, se) = simple_regression_slope(z, &g);
        assert!(slope.abs() < 4.0 * se, "slope {slope}, se {se}");
    }

    #[test]
    fn hidden_direction_has_the_stated_variance() {
        // Var(g(U) | A, X) = (theta1^2 + theta2^2) sigma_u^2; with the
        // reference profile the marginal variance matches because the mean
        // of g is identically zero.
        let spec = CompletenessFailureDgm::reference();
        let d = sample_completeness_failure(&spec, 100_000, 29).unwrap();
        let u1 = d.col("U1").unwrap();
        let u2 = d.col("U2").unwrap();
        let g: Vec<f64> = u1.iter().zip(u2).map(|(&a, &b)| spec.g_u(a, b)).collect();
        let n = g.len() as f64;
        let mean = g.iter().sum::<f64>() / n;
        let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expected = (spec.theta1 * spec.theta1 + spec.theta2 * spec.theta2)
            * spec.sigma_u
            * spec.sigma_u;
        assert!(
            (var / expected - 1.0).abs() < 0.05,
            "var {var} vs expected {expected}"
        );
        assert!(expected > 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = CompletenessFailureDgm::reference();
        let d1 = sample_completeness_failure(&spec, 400, 3).unwrap();
        let d2 = sample_completeness_failure(&spec, 400, 3).unwrap();
        for name in d1.names() {
            assert_eq!(d1.col(name).unwrap(), d2.col(name).unwrap());
        }
    }

    #[test]
    fn zero_loading_is_rejected() {
        let mut spec = CompletenessFailureDgm::reference();
        spec.theta1 = 0.0;
        assert!(sample_completeness_failure(&spec, 10, 1).is_err());
    }

    #[test]
    fn truth_flags_dimensionality_violation() {
        let spec = CompletenessFailureDgm::reference();
        let t = spec.true_ate().unwrap();
        // The per-draw interventional contrast is the constant beta_a, so
        // the Monte Carlo mean matches up to float accumulation.
        assert!((t.true_ate - spec.beta_a).abs() < 1e-9);
        assert_eq!(t.status(Assumption::ZCompleteForU), AssumptionStatus::Violated);
    }
}
