//! Parametric bridge-function specifications and their moment systems.
//!
//! The outcome bridge `h(W, A, X; eta)` is a link function applied to a
//! linear basis over outcome proxies, treatment, and covariates; it stands in
//! for the latent outcome regression `E[Y | U, A, X]`. The treatment bridge
//! `q(Z, A, X; phi) = 1 + exp((-1)^(1-A) basis'phi)` stands in for the
//! inverse latent propensity. Each spec compiles to a [`MomentSystem`]:
//! residuals `(Y - h) k(Z, A, X)` for the outcome bridge and
//! `(-1)^(1-A) q k(W, A, X) - e_A` for the treatment bridge, with analytic
//! Jacobians.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};
use crate::moments::MomentSystem;

/// Exponent magnitude beyond which the treatment-bridge exponential is
/// clamped to avoid overflow. Clamp events are surfaced through diagnostic
/// counters, never silently.
pub const EXP_CLAMP: f64 = 700.0;

/// Upper bound on basis / instrument term counts, so the hot moment-system
/// closures can use fixed stack scratch.
pub const MAX_TERMS: usize = 32;

/// Link function of the outcome bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Logit,
    Log,
}

impl Link {
    #[inline]
    pub fn apply(self, lin: f64) -> f64 {
        match self {
            Link::Identity => lin,
            Link::Logit => expit(lin),
            Link::Log => lin.exp(),
        }
    }

    /// Derivative of the mean with respect to the linear predictor.
    #[inline]
    pub fn derivative(self, lin: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => {
                let p = expit(lin);
                p * (1.0 - p)
            }
            Link::Log => lin.exp(),
        }
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One term of a linear basis or instrument vector.
///
/// `Treatment` always refers to the treatment role, so counterfactual
/// evaluation can substitute `a = 0, 1`; every other column is referenced by
/// name. Interactions are declared pairwise products.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Feature {
    Intercept,
    Treatment,
    Column(String),
    Product(Box<Feature>, Box<Feature>),
}

impl Feature {
    /// Parses a term string: `"1"` is the intercept, `"A"` the treatment,
    /// `"a*b"` a pairwise product, and anything else a column name.
    pub fn parse(s: &str) -> Result<Feature> {
        let s = s.trim();
        if let Some((lhs, rhs)) = s.split_once('*') {
            let l = Feature::parse_atom(lhs)?;
            let r = Feature::parse_atom(rhs)?;
            return Ok(Feature::Product(Box::new(l), Box::new(r)));
        }
        Feature::parse_atom(s)
    }

    fn parse_atom(s: &str) -> Result<Feature> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Config("empty basis term".into()));
        }
        if s.contains('*') {
            return Err(Error::Config(format!(
                "nested products are not supported in term '{s}'"
            )));
        }
        Ok(match s {
            "1" => Feature::Intercept,
            "A" => Feature::Treatment,
            name => Feature::Column(name.to_string()),
        })
    }
}

impl TryFrom<String> for Feature {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        Feature::parse(&s).map_err(|e| e.to_string())
    }
}

impl From<Feature> for String {
    fn from(f: Feature) -> String {
        f.to_string()
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Feature::Intercept => write!(f, "1"),
            Feature::Treatment => write!(f, "A"),
            Feature::Column(name) => write!(f, "{name}"),
            Feature::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

/// A feature resolved against a dataset layout for fast row evaluation.
#[derive(Debug, Clone)]
enum Compiled {
    Intercept,
    Treatment,
    Column(usize),
    Product(Box<Compiled>, Box<Compiled>),
}

impl Compiled {
    #[inline]
    fn value(&self, data: &Dataset, treat_idx: usize, row: usize, a_override: Option<f64>) -> f64 {
        match self {
            Compiled::Intercept => 1.0,
            Compiled::Treatment => a_override.unwrap_or_else(|| data.value(treat_idx, row)),
            Compiled::Column(idx) => data.value(*idx, row),
            Compiled::Product(a, b) => {
                a.value(data, treat_idx, row, a_override) * b.value(data, treat_idx, row, a_override)
            }
        }
    }
}

/// A basis compiled against one dataset layout.
#[derive(Debug, Clone)]
pub(crate) struct CompiledBasis {
    feats: Vec<Compiled>,
    treat_idx: usize,
}

impl CompiledBasis {
    pub(crate) fn compile(features: &[Feature], data: &Dataset) -> Result<CompiledBasis> {
        if features.len() > MAX_TERMS {
            return Err(Error::Config(format!(
                "at most {MAX_TERMS} basis or instrument terms are supported, got {}",
                features.len()
            )));
        }
        let treat_idx = data
            .col_index(&data.roles().treatment)
            .expect("validated role");
        fn compile_one(f: &Feature, data: &Dataset) -> Result<Compiled> {
            Ok(match f {
                Feature::Intercept => Compiled::Intercept,
                Feature::Treatment => Compiled::Treatment,
                Feature::Column(name) => Compiled::Column(
                    data.col_index(name)
                        .ok_or_else(|| Error::MissingColumn(name.clone()))?,
                ),
                Feature::Product(a, b) => {
                    if matches!(**a, Feature::Product(..)) || matches!(**b, Feature::Product(..)) {
                        return Err(Error::Config(format!(
                            "interactions must be pairwise products, got '{f}'"
                        )));
                    }
                    Compiled::Product(
                        Box::new(compile_one(a, data)?),
                        Box::new(compile_one(b, data)?),
                    )
                }
            })
        }
        let feats = features
            .iter()
            .map(|f| compile_one(f, data))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledBasis { feats, treat_idx })
    }

    pub(crate) fn len(&self) -> usize {
        self.feats.len()
    }

    #[inline]
    pub(crate) fn fill(&self, data: &Dataset, row: usize, a_override: Option<f64>, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.feats) {
            *o = f.value(data, self.treat_idx, row, a_override);
        }
    }

    #[inline]
    pub(crate) fn dot(&self, data: &Dataset, row: usize, a_override: Option<f64>, coef: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, f) in coef.iter().zip(&self.feats) {
            acc += c * f.value(data, self.treat_idx, row, a_override);
        }
        acc
    }
}

fn columns(names: &[String]) -> impl Iterator<Item = Feature> + '_ {
    names.iter().map(|n| Feature::Column(n.clone()))
}

/// Default instrument vector for the outcome bridge: `(1, Z..., A, X...)`.
pub fn default_h_instruments(roles: &ColumnRoles) -> Vec<Feature> {
    let mut k = vec![Feature::Intercept];
    k.extend(columns(&roles.treatment_proxies));
    k.push(Feature::Treatment);
    k.extend(columns(&roles.covariates));
    k
}

/// Default instrument vector for the treatment bridge: `(1, W..., A, X...)`.
pub fn default_q_instruments(roles: &ColumnRoles) -> Vec<Feature> {
    let mut k = vec![Feature::Intercept];
    k.extend(columns(&roles.outcome_proxies));
    k.push(Feature::Treatment);
    k.extend(columns(&roles.covariates));
    k
}

/// Parametric outcome bridge `h(W, A, X; eta) = link(basis' eta)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeBridgeSpec {
    pub link: Link,
    /// Ordered basis; must contain the intercept and the treatment.
    pub basis: Vec<Feature>,
    /// Coefficients aligned with `basis`; zeros before fitting.
    pub eta: Vec<f64>,
    /// Explicit instrument vector; `None` selects `(1, Z..., A, X...)`.
    #[serde(default)]
    pub instruments: Option<Vec<Feature>>,
}

impl OutcomeBridgeSpec {
    /// Linear bridge over `(1, W..., A, X...)`.
    pub fn linear(roles: &ColumnRoles) -> Self {
        let mut basis = vec![Feature::Intercept];
        basis.extend(columns(&roles.outcome_proxies));
        basis.push(Feature::Treatment);
        basis.extend(columns(&roles.covariates));
        let eta = vec![0.0; basis.len()];
        OutcomeBridgeSpec {
            link: Link::Identity,
            basis,
            eta,
            instruments: None,
        }
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_basis(mut self, basis: Vec<Feature>) -> Self {
        self.eta = vec![0.0; basis.len()];
        self.basis = basis;
        self
    }

    pub fn with_eta(mut self, eta: Vec<f64>) -> Self {
        assert_eq!(eta.len(), self.basis.len(), "eta must align with basis");
        self.eta = eta;
        self
    }

    pub fn with_instruments(mut self, instruments: Vec<Feature>) -> Self {
        self.instruments = Some(instruments);
        self
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if !self.basis.contains(&Feature::Intercept) {
            return Err(Error::Config("outcome bridge basis must include the intercept".into()));
        }
        if !self.basis.contains(&Feature::Treatment) {
            return Err(Error::Config("outcome bridge basis must include the treatment".into()));
        }
        if self.eta.len() != self.basis.len() {
            return Err(Error::Config(format!(
                "eta has {} entries for a {}-term basis",
                self.eta.len(),
                self.basis.len()
            )));
        }
        if self.link == Link::Logit {
            let y = data.outcome();
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(
                    "logit-link outcome bridge requires a 0/1 outcome".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Evaluates `h` at a row using the stored `eta`; `a_override` substitutes a
/// counterfactual treatment value into every basis term involving `A`.
pub fn eval_h(
    spec: &OutcomeBridgeSpec,
    data: &Dataset,
    row: usize,
    a_override: Option<f64>,
) -> Result<f64> {
    let basis = CompiledBasis::compile(&spec.basis, data)?;
    Ok(spec.link.apply(basis.dot(data, row, a_override, &spec.eta)))
}

/// Builds the outcome-bridge moment system `(Y - h(W, A, X; eta)) k` with
/// `k = (1, Z..., A, X...)` by default. The parameter vector is `eta`.
pub fn outcome_bridge_moments(spec: &OutcomeBridgeSpec, data: &Dataset) -> Result<MomentSystem> {
    spec.validate(data)?;
    let basis = CompiledBasis::compile(&spec.basis, data)?;
    let instruments = match &spec.instruments {
        Some(k) => k.clone(),
        None => default_h_instruments(data.roles()),
    };
    let k = CompiledBasis::compile(&instruments, data)?;
    if k.len() < basis.len() {
        return Err(Error::Identification {
            system: "outcome_bridge".into(),
            parameters: basis.len(),
            instruments: k.len(),
        });
    }
    let dim_m = k.len();
    let dim_t = basis.len();
    let y_idx = data.col_index(&data.roles().outcome).expect("validated role");
    let link = spec.link;

    let basis_r = basis.clone();
    let k_r = k.clone();
    let residual = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let h = link.apply(basis_r.dot(d, row, None, theta));
        let resid = d.value(y_idx, row) - h;
        k_r.fill(d, row, None, out);
        for o in out.iter_mut() {
            *o *= resid;
        }
    };
    let jacobian = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let lin = basis.dot(d, row, None, theta);
        let dmean = link.derivative(lin);
        let mut bvals = [0.0; MAX_TERMS];
        basis.fill(d, row, None, &mut bvals[..dim_t]);
        let mut kvals = [0.0; MAX_TERMS];
        k.fill(d, row, None, &mut kvals[..dim_m]);
        for i in 0..dim_m {
            for j in 0..dim_t {
                out[i * dim_t + j] = -dmean * bvals[j] * kvals[i];
            }
        }
    };
    let system = MomentSystem::new("outcome_bridge", dim_m, dim_t, residual, jacobian);
    Ok(if link == Link::Identity {
        system.linear()
    } else {
        system
    })
}

/// Parametric treatment bridge with the fixed form
/// `q(Z, A, X; phi) = 1 + exp((-1)^(1-A) basis' phi)`, which is strictly
/// greater than 1 for all inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreatmentBridgeSpec {
    /// Ordered basis inside the exponent; must contain the intercept and the
    /// treatment.
    pub basis: Vec<Feature>,
    /// Coefficients aligned with `basis`; zeros before fitting.
    pub phi: Vec<f64>,
    /// Explicit instrument vector; `None` selects `(1, W..., A, X...)`.
    /// Must contain the treatment term: the target vector places a 1 in the
    /// `A` slot.
    #[serde(default)]
    pub instruments: Option<Vec<Feature>>,
}

impl TreatmentBridgeSpec {
    /// Standard basis `(1, Z..., A, X...)`.
    pub fn standard(roles: &ColumnRoles) -> Self {
        let mut basis = vec![Feature::Intercept];
        basis.extend(columns(&roles.treatment_proxies));
        basis.push(Feature::Treatment);
        basis.extend(columns(&roles.covariates));
        let phi = vec![0.0; basis.len()];
        TreatmentBridgeSpec {
            basis,
            phi,
            instruments: None,
        }
    }

    pub fn with_basis(mut self, basis: Vec<Feature>) -> Self {
        self.phi = vec![0.0; basis.len()];
        self.basis = basis;
        self
    }

    pub fn with_phi(mut self, phi: Vec<f64>) -> Self {
        assert_eq!(phi.len(), self.basis.len(), "phi must align with basis");
        self.phi = phi;
        self
    }

    pub fn with_instruments(mut self, instruments: Vec<Feature>) -> Self {
        self.instruments = Some(instruments);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.basis.contains(&Feature::Intercept) {
            return Err(Error::Config("treatment bridge basis must include the intercept".into()));
        }
        if !self.basis.contains(&Feature::Treatment) {
            return Err(Error::Config("treatment bridge basis must include the treatment".into()));
        }
        if self.phi.len() != self.basis.len() {
            return Err(Error::Config(format!(
                "phi has {} entries for a {}-term basis",
                self.phi.len(),
                self.basis.len()
            )));
        }
        Ok(())
    }
}

/// Sign `(-1)^(1-a)`: +1 under treatment, -1 under control.
#[inline]
pub fn arm_sign(a: f64) -> f64 {
    if a == 1.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn q_from_exponent(e: f64) -> (f64, bool) {
    if e > EXP_CLAMP {
        (1.0 + EXP_CLAMP.exp(), true)
    } else if e < -EXP_CLAMP {
        (1.0 + (-EXP_CLAMP).exp(), true)
    } else {
        (1.0 + e.exp(), false)
    }
}

/// Evaluates `q` at a row using the stored `phi`, reporting whether the
/// exponent was clamped. `a_override` substitutes a counterfactual treatment
/// into both the arm sign and the basis.
pub fn eval_q_checked(
    spec: &TreatmentBridgeSpec,
    data: &Dataset,
    row: usize,
    a_override: Option<f64>,
) -> Result<(f64, bool)> {
    let basis = CompiledBasis::compile(&spec.basis, data)?;
    let a = a_override.unwrap_or_else(|| data.treatment()[row]);
    let u = basis.dot(data, row, a_override, &spec.phi);
    Ok(q_from_exponent(arm_sign(a) * u))
}

/// Evaluates `q` at a row; see [`eval_q_checked`] for clamp reporting.
pub fn eval_q(
    spec: &TreatmentBridgeSpec,
    data: &Dataset,
    row: usize,
    a_override: Option<f64>,
) -> Result<f64> {
    eval_q_checked(spec, data, row, a_override).map(|(q, _)| q)
}

/// Builds the treatment-bridge moment system
/// `(-1)^(1-A) q(Z, A, X; phi) k - e_A` with `k = (1, W..., A, X...)` by
/// default and `e_A` the unit vector in the treatment slot. The parameter
/// vector is `phi`. Clamped exponents increment `clamp_counter`.
pub fn treatment_bridge_moments(
    spec: &TreatmentBridgeSpec,
    data: &Dataset,
    clamp_counter: Option<Arc<AtomicUsize>>,
) -> Result<MomentSystem> {
    spec.validate()?;
    let basis = CompiledBasis::compile(&spec.basis, data)?;
    let instruments = match &spec.instruments {
        Some(k) => k.clone(),
        None => default_q_instruments(data.roles()),
    };
    let a_slot = instruments
        .iter()
        .position(|f| *f == Feature::Treatment)
        .ok_or_else(|| {
            Error::Config("treatment bridge instruments must include the treatment term".into())
        })?;
    let k = CompiledBasis::compile(&instruments, data)?;
    if k.len() < basis.len() {
        return Err(Error::Identification {
            system: "treatment_bridge".into(),
            parameters: basis.len(),
            instruments: k.len(),
        });
    }
    let dim_m = k.len();
    let dim_t = basis.len();

    let basis_r = basis.clone();
    let k_r = k.clone();
    let counter_r = clamp_counter.clone();
    let residual = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let s = arm_sign(d.treatment()[row]);
        let (q, clamped) = q_from_exponent(s * basis_r.dot(d, row, None, theta));
        if clamped {
            if let Some(c) = &counter_r {
                c.fetch_add(1, Ordering::Relaxed);
            }
        }
        k_r.fill(d, row, None, out);
        for o in out.iter_mut() {
            *o *= s * q;
        }
        out[a_slot] -= 1.0;
    };
    let jacobian = move |d: &Dataset, row: usize, theta: &[f64], out: &mut [f64]| {
        let s = arm_sign(d.treatment()[row]);
        let e = s * basis.dot(d, row, None, theta);
        // dq/dphi_j = exp(e) * s * b_j, zero where the exponent is clamped.
        let dq = if e.abs() > EXP_CLAMP { 0.0 } else { e.exp() };
        let mut bvals = [0.0; MAX_TERMS];
        basis.fill(d, row, None, &mut bvals[..dim_t]);
        let mut kvals = [0.0; MAX_TERMS];
        k.fill(d, row, None, &mut kvals[..dim_m]);
        for i in 0..dim_m {
            for j in 0..dim_t {
                // s * k_i * dq/dphi_j with s^2 = 1.
                out[i * dim_t + j] = kvals[i] * dq * bvals[j];
            }
        }
    };
    Ok(MomentSystem::new("treatment_bridge", dim_m, dim_t, residual, jacobian))
}
