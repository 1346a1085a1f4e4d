//! Fully categorical simulation model: all of U, X, A, Z, W, Y binary.
//!
//! Ancestral sampling over explicit probability tables. The table shapes
//! encode the proxy independencies by construction: the Z table never
//! depends on Y, and the W table depends on neither A nor Z. The true ATE is
//! computed by exact enumeration over the (U, X) cells.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{holds_if, Assumption, AssumptionStatus, TruthRecord};
use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};
use crate::rng;

/// Probability tables of the binary model. Index order is `[u][x]` for
/// two-way tables and `[u][a][x]` for three-way tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryDgm {
    /// Joint cell probabilities P(U = u, X = x); must sum to 1.
    pub p_ux: [[f64; 2]; 2],
    /// P(A = 1 | U = u, X = x).
    pub p_a: [[f64; 2]; 2],
    /// P(Z = 1 | U = u, A = a, X = x).
    pub p_z: [[[f64; 2]; 2]; 2],
    /// P(W = 1 | U = u, X = x).
    pub p_w: [[f64; 2]; 2],
    /// P(Y = 1 | U = u, A = a, X = x).
    pub p_y: [[[f64; 2]; 2]; 2],
}

impl BinaryDgm {
    /// Reference configuration with well-separated tables (strong proxy
    /// relevance) and genuine confounding. Repo choice, not a reproduction
    /// of any published study.
    pub fn reference() -> Self {
        BinaryDgm {
            p_ux: [[0.24, 0.16], [0.36, 0.24]],
            p_a: [[0.35, 0.45], [0.65, 0.75]],
            p_z: [
                [[0.25, 0.30], [0.20, 0.28]],
                [[0.75, 0.80], [0.70, 0.78]],
            ],
            p_w: [[0.30, 0.25], [0.80, 0.70]],
            p_y: [
                [[0.30, 0.40], [0.55, 0.65]],
                [[0.45, 0.55], [0.70, 0.80]],
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.p_ux.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "joint (U, X) cell probabilities sum to {total}, expected 1"
            )));
        }
        let strictly_inside = |v: f64| v > 0.0 && v < 1.0;
        for u in 0..2 {
            for x in 0..2 {
                if !strictly_inside(self.p_ux[u][x]) {
                    return Err(Error::Config("joint cell probabilities must lie in (0, 1)".into()));
                }
                if !strictly_inside(self.p_a[u][x]) {
                    return Err(Error::Config(
                        "treatment probabilities must lie strictly inside (0, 1) (latent positivity)"
                            .into(),
                    ));
                }
                if !strictly_inside(self.p_w[u][x]) {
                    return Err(Error::Config("W probabilities must lie in (0, 1)".into()));
                }
                for a in 0..2 {
                    if !strictly_inside(self.p_z[u][a][x]) {
                        return Err(Error::Config("Z probabilities must lie in (0, 1)".into()));
                    }
                    if !strictly_inside(self.p_y[u][a][x]) {
                        return Err(Error::Config("Y probabilities must lie in (0, 1)".into()));
                    }
                }
            }
        }
        // U-relevance: each proxy table must actually vary with U.
        for a in 0..2 {
            for x in 0..2 {
                if self.p_z[1][a][x] == self.p_z[0][a][x] {
                    return Err(Error::Config(format!(
                        "Z is not U-relevant at (a={a}, x={x}): P(Z=1|U=1) = P(Z=1|U=0)"
                    )));
                }
            }
        }
        for x in 0..2 {
            if self.p_w[1][x] == self.p_w[0][x] {
                return Err(Error::Config(format!(
                    "W is not U-relevant at x={x}: P(W=1|U=1) = P(W=1|U=0)"
                )));
            }
        }
        Ok(())
    }

    /// True ATE by exact enumeration over the (U, X) cells, with assumption
    /// flags. The joint cell probabilities are verified to sum to one before
    /// differencing.
    pub fn true_ate(&self) -> Result<TruthRecord> {
        self.validate()?;
        let mut total = 0.0;
        for u in 0..2 {
            for x in 0..2 {
                total += self.p_ux[u][x];
            }
        }
        debug_assert!((total - 1.0).abs() <= 1e-12);
        let mut ate = 0.0;
        for u in 0..2 {
            for x in 0..2 {
                ate += self.p_ux[u][x] * (self.p_y[u][1][x] - self.p_y[u][0][x]);
            }
        }
        let confounded = (0..2).any(|x| {
            self.p_a[1][x] != self.p_a[0][x]
                && (0..2).any(|a| self.p_y[1][a][x] != self.p_y[0][a][x])
        });
        let mut flags = std::collections::BTreeMap::new();
        flags.insert(Assumption::Consistency, AssumptionStatus::Holds);
        flags.insert(Assumption::Positivity, AssumptionStatus::Holds);
        flags.insert(Assumption::Unconfoundedness, holds_if(!confounded));
        flags.insert(Assumption::LatentPositivity, AssumptionStatus::Holds);
        flags.insert(Assumption::ZConditionalIndependence, AssumptionStatus::Holds);
        flags.insert(Assumption::WConditionalIndependence, AssumptionStatus::Holds);
        flags.insert(Assumption::LatentUnconfoundedness, AssumptionStatus::Holds);
        // Binary U against a U-relevant binary proxy: the 2x2 conditional
        // table is full rank, which is completeness in the categorical case.
        flags.insert(Assumption::OutcomeBridgeExists, AssumptionStatus::Holds);
        flags.insert(Assumption::ZCompleteForU, AssumptionStatus::Holds);
        flags.insert(Assumption::TreatmentBridgeExists, AssumptionStatus::Holds);
        flags.insert(Assumption::WCompleteForU, AssumptionStatus::Holds);
        Ok(TruthRecord { true_ate: ate, flags })
    }
}

/// Samples `n` rows of 0/1 columns U, X, A, Z, W, Y by ancestral sampling.
/// Deterministic given the seed.
pub fn sample_binary(spec: &BinaryDgm, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut r = rng::from_seed(seed);
    fn draw(r: &mut rng::Rng, p: f64) -> f64 {
        if r.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    }
    // Cumulative joint for (U, X) in the fixed order (0,0), (0,1), (1,0), (1,1).
    let cells = [
        (0usize, 0usize, spec.p_ux[0][0]),
        (0, 1, spec.p_ux[0][1]),
        (1, 0, spec.p_ux[1][0]),
        (1, 1, spec.p_ux[1][1]),
    ];
    let mut cols: [Vec<f64>; 6] = Default::default();
    for _ in 0..n {
        let t: f64 = r.random();
        let mut acc = 0.0;
        let mut u = 1usize;
        let mut x = 1usize;
        for &(cu, cx, p) in &cells {
            acc += p;
            if t < acc {
                u = cu;
                x = cx;
                break;
            }
        }
        let a = draw(&mut r, spec.p_a[u][x]) as usize;
        let z = draw(&mut r, spec.p_z[u][a][x]);
        let w = draw(&mut r, spec.p_w[u][x]);
        let y = draw(&mut r, spec.p_y[u][a][x]);
        cols[0].push(u as f64);
        cols[1].push(x as f64);
        cols[2].push(a as f64);
        cols[3].push(z);
        cols[4].push(w);
        cols[5].push(y);
    }
    let [u_col, x_col, a_col, z_col, w_col, y_col] = cols;
    let mut roles = ColumnRoles::scalar("Y", "A", "X", "Z", "W");
    roles.hidden = vec!["U".into()];
    Dataset::from_columns(
        vec![
            ("U".into(), u_col),
            ("X".into(), x_col),
            ("A".into(), a_col),
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
    fn fair_outcome_has_mean_near_half() {
        let mut spec = BinaryDgm::reference();
        spec.p_y = [[[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]]];
        let n = 40_000;
        let d = sample_binary(&spec, n, 5).unwrap();
        let mean = d.outcome().iter().sum::<f64>() / n as f64;
        let bound = 4.0 * (0.25 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < bound, "mean {mean}");
    }

    #[test]
    fn w_independent_of_u_is_rejected() {
        let mut spec = BinaryDgm::reference();
        spec.p_w = [[0.4, 0.3], [0.4, 0.7]];
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let spec = BinaryDgm::reference();
        let d1 = sample_binary(&spec, 300, 9).unwrap();
        let d2 = sample_binary(&spec, 300, 9).unwrap();
        for name in d1.names() {
            assert_eq!(d1.col(name).unwrap(), d2.col(name).unwrap());
        }
    }

    #[test]
    fn null_effect_tables_give_zero_ate() {
        let mut spec = BinaryDgm::reference();
        spec.p_y = [[[0.3, 0.4], [0.3, 0.4]], [[0.6, 0.7], [0.6, 0.7]]];
        let t = spec.true_ate().unwrap();
        assert_eq!(t.true_ate, 0.0);
    }

    #[test]
    fn enumeration_matches_hand_computation() {
        // Uniform P(u, x) = 0.25, P(Y=1|u, 1, x) = 0.8, P(Y=1|u, 0, x) = 0.3.
        let mut spec = BinaryDgm::reference();
        spec.p_ux = [[0.25, 0.25], [0.25, 0.25]];
        spec.p_y = [[[0.3, 0.3], [0.8, 0.8]], [[0.3, 0.3], [0.8, 0.8]]];
        let t = spec.true_ate().unwrap();
        assert!((t.true_ate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_cell_probabilities_are_rejected() {
        let mut spec = BinaryDgm::reference();
        spec.p_a[0][0] = 0.0;
        assert!(spec.validate().is_err());
        let mut spec2 = BinaryDgm::reference();
        spec2.p_ux = [[0.3, 0.3], [0.3, 0.3]];
        assert!(spec2.validate().is_err());
    }
}
