//! Simulation data-generating models with analytically known ground truth.
//!
//! Each model samples role-tagged datasets (hidden confounders included,
//! tagged as such) and reports a [`TruthRecord`]: the true average treatment
//! effect plus per-assumption flags derived from its parameter restrictions.
//! Sampling is a pure function of `(spec, n, seed)`.

mod binary;
mod completeness_failure;
mod linear_gaussian;

pub use binary::{sample_binary, BinaryDgm};
pub use completeness_failure::{sample_completeness_failure, CompletenessFailureDgm};
pub use linear_gaussian::{sample_linear_gaussian, LinearGaussianDgm, TreatmentConditioning};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Identification assumptions tracked by the simulation models.
///
/// The identifiers `A1..A11` cover: the three classical assumptions
/// (consistency, positivity, unconfoundedness), the proximal base assumptions
/// (latent positivity, the two proxy conditional independencies, latent
/// unconfoundedness), and the bridge-existence and completeness conditions of
/// the two identification paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assumption {
    /// A1: observed outcome equals the potential outcome under the received
    /// treatment.
    Consistency,
    /// A2: both treatment levels have positive probability given X.
    Positivity,
    /// A3: no unobserved confounding given X (what the naive estimators
    /// need; deliberately violated in confounded models).
    Unconfoundedness,
    /// A4: both treatment levels have positive probability given (U, X).
    LatentPositivity,
    /// A5: Z independent of Y given (U, A, X).
    ZConditionalIndependence,
    /// A6: W independent of (A, Z) given (U, X).
    WConditionalIndependence,
    /// A7: treatment ignorable given (U, X).
    LatentUnconfoundedness,
    /// A8: an outcome bridge function exists.
    OutcomeBridgeExists,
    /// A9: Z is complete for U given (A, X); requires U-relevance and
    /// dim(Z) >= dim(U).
    ZCompleteForU,
    /// A10: a treatment bridge function exists.
    TreatmentBridgeExists,
    /// A11: W is complete for U given (A, X).
    WCompleteForU,
}

impl Assumption {
    pub fn id(self) -> &'static str {
        match self {
            Assumption::Consistency => "A1",
            Assumption::Positivity => "A2",
            Assumption::Unconfoundedness => "A3",
            Assumption::LatentPositivity => "A4",
            Assumption::ZConditionalIndependence => "A5",
            Assumption::WConditionalIndependence => "A6",
            Assumption::LatentUnconfoundedness => "A7",
            Assumption::OutcomeBridgeExists => "A8",
            Assumption::ZCompleteForU => "A9",
            Assumption::TreatmentBridgeExists => "A10",
            Assumption::WCompleteForU => "A11",
        }
    }

    pub fn all() -> [Assumption; 11] {
        [
            Assumption::Consistency,
            Assumption::Positivity,
            Assumption::Unconfoundedness,
            Assumption::LatentPositivity,
            Assumption::ZConditionalIndependence,
            Assumption::WConditionalIndependence,
            Assumption::LatentUnconfoundedness,
            Assumption::OutcomeBridgeExists,
            Assumption::ZCompleteForU,
            Assumption::TreatmentBridgeExists,
            Assumption::WCompleteForU,
        ]
    }
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Whether a model configuration satisfies an assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumptionStatus {
    Holds,
    Violated,
    NotApplicable,
}

impl std::fmt::Display for AssumptionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AssumptionStatus::Holds => write!(f, "holds"),
            AssumptionStatus::Violated => write!(f, "violated"),
            AssumptionStatus::NotApplicable => write!(f, "not-applicable"),
        }
    }
}

/// Ground truth of a simulation model: the true ATE and assumption flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub true_ate: f64,
    pub flags: BTreeMap<Assumption, AssumptionStatus>,
}

impl TruthRecord {
    pub fn status(&self, a: Assumption) -> AssumptionStatus {
        self.flags
            .get(&a)
            .copied()
            .unwrap_or(AssumptionStatus::NotApplicable)
    }
}

pub(crate) fn holds_if(condition: bool) -> AssumptionStatus {
    if condition {
        AssumptionStatus::Holds
    } else {
        AssumptionStatus::Violated
    }
}
