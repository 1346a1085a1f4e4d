//! Saturated nonparametric estimator for fully binary data.
//!
//! Within every treatment-covariate cell (a, x) the outcome bridge is a
//! two-entry lookup table solving `psi_ax h_ax = y_ax`, where `psi_ax` holds
//! the conditional W distribution given each Z value and `y_ax` the outcome
//! means given each Z value. Cell frequencies are used raw, with no
//! smoothing; a near-singular `psi_ax` is an error rather than a warning,
//! because silently inverting an ill-conditioned table would mask
//! completeness failure.

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::{bootstrap, BootstrapConfig, EstimateResult, EstimatorKind};

/// Determinant threshold below which a cell table is treated as singular.
pub const DET_LIMIT: f64 = 1e-8;

/// Solves one 2x2 cell: `h = psi^{-1} y` with
/// `psi[z][w] = P(W = w | Z = z, a, x)` and `y[z] = E[Y | Z = z, a, x]`.
pub fn solve_saturated_cell(psi: [[f64; 2]; 2], y: [f64; 2], cell: &str) -> Result<[f64; 2]> {
    let det = psi[0][0] * psi[1][1] - psi[0][1] * psi[1][0];
    if det.abs() < DET_LIMIT {
        return Err(Error::NearSingular {
            cell: cell.to_string(),
            det: det.abs(),
        });
    }
    Ok([
        (psi[1][1] * y[0] - psi[0][1] * y[1]) / det,
        (-psi[1][0] * y[0] + psi[0][0] * y[1]) / det,
    ])
}

fn require_binary(data: &Dataset, name: &str) -> Result<()> {
    let col = data
        .col(name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    if col.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation(format!(
            "saturated_binary requires a 0/1 column, but '{name}' is not binary"
        )));
    }
    Ok(())
}

#[derive(Default)]
struct CellCounts {
    /// Joint (z, w) counts.
    n_zw: [[f64; 2]; 2],
    /// Outcome sums and counts per z.
    y_sum: [f64; 2],
    n_z: [f64; 2],
}

fn cell_label(a: usize, x: &[u8]) -> String {
    if x.is_empty() {
        format!("a={a}")
    } else {
        let bits: Vec<String> = x.iter().map(|b| b.to_string()).collect();
        format!("a={a},x=({})", bits.join(","))
    }
}

/// Saturated nonparametric ATE estimator for binary A, X, Z, W, Y with one
/// Z and one W column. Requires every (a, x, z) cell to be nonempty and
/// every cell table to be invertible. Standard errors come from the
/// bootstrap when a configuration is supplied.
pub fn saturated_binary(
    data: &Dataset,
    bootstrap_cfg: Option<&BootstrapConfig>,
) -> Result<EstimateResult> {
    let roles = data.roles().clone();
    if roles.treatment_proxies.len() != 1 || roles.outcome_proxies.len() != 1 {
        return Err(Error::Validation(
            "saturated_binary requires exactly one Z column and one W column".into(),
        ));
    }
    require_binary(data, &roles.outcome)?;
    for name in std::iter::once(&roles.treatment_proxies[0])
        .chain(std::iter::once(&roles.outcome_proxies[0]))
        .chain(roles.covariates.iter())
    {
        require_binary(data, name)?;
    }
    // Treatment is 0/1 by the dataset contract.

    let a = data.treatment();
    let y = data.outcome();
    let z = data.col(&roles.treatment_proxies[0]).expect("validated role");
    let w = data.col(&roles.outcome_proxies[0]).expect("validated role");
    let x_cols: Vec<&[f64]> = roles
        .covariates
        .iter()
        .map(|c| data.col(c).expect("validated role"))
        .collect();

    let pattern = |row: usize| -> Vec<u8> { x_cols.iter().map(|c| c[row] as u8).collect() };

    let mut cells: BTreeMap<(usize, Vec<u8>), CellCounts> = BTreeMap::new();
    for row in 0..data.n() {
        let key = (a[row] as usize, pattern(row));
        let cell = cells.entry(key).or_default();
        let zi = z[row] as usize;
        let wi = w[row] as usize;
        cell.n_zw[zi][wi] += 1.0;
        cell.y_sum[zi] += y[row];
        cell.n_z[zi] += 1.0;
    }

    // Every x pattern observed anywhere needs both arms with both z values.
    let patterns: std::collections::BTreeSet<Vec<u8>> =
        cells.keys().map(|(_, x)| x.clone()).collect();
    let mut missing = Vec::new();
    for x in &patterns {
        for arm in 0..2 {
            match cells.get(&(arm, x.clone())) {
                None => {
                    missing.push(cell_label(arm, x));
                }
                Some(c) => {
                    for zi in 0..2 {
                        if c.n_z[zi] == 0.0 {
                            missing.push(format!("{},z={zi}", cell_label(arm, x)));
                        }
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::CellSupport(missing));
    }

    // Per-cell bridge tables.
    let mut h_tables: BTreeMap<(usize, Vec<u8>), [f64; 2]> = BTreeMap::new();
    let mut min_det = f64::INFINITY;
    for ((arm, x), c) in &cells {
        let mut psi = [[0.0; 2]; 2];
        let mut yv = [0.0; 2];
        for zi in 0..2 {
            for (wi, cell) in psi[zi].iter_mut().enumerate() {
                *cell = c.n_zw[zi][wi] / c.n_z[zi];
            }
            yv[zi] = c.y_sum[zi] / c.n_z[zi];
        }
        let det = psi[0][0] * psi[1][1] - psi[0][1] * psi[1][0];
        min_det = min_det.min(det.abs());
        let h = solve_saturated_cell(psi, yv, &cell_label(*arm, x))?;
        h_tables.insert((*arm, x.clone()), h);
    }

    let mut sum = 0.0;
    for (row, &wv) in w.iter().enumerate() {
        let x = pattern(row);
        let wi = wv as usize;
        let h1 = h_tables[&(1, x.clone())][wi];
        let h0 = h_tables[&(0, x)][wi];
        sum += h1 - h0;
    }
    let tau = sum / data.n() as f64;

    let mut result = EstimateResult::new(EstimatorKind::SaturatedBinary, tau, data.n());
    result.note("cells", cells.len() as f64);
    result.note("min_abs_det", min_det);
    if let Some(cfg) = bootstrap_cfg {
        let replicated = bootstrap(data, |d| saturated_binary(d, None), cfg)?;
        result.se = replicated.se;
        result.ci_low = replicated.ci_low;
        result.ci_high = replicated.ci_high;
        for (k, v) in replicated.diagnostics {
            result.diagnostics.insert(k, v);
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnRoles;
    use crate::dgm::{sample_binary, BinaryDgm};

    #[test]
    fn hand_worked_cell_inversion() {
        let psi = [[0.7, 0.3], [0.4, 0.6]];
        let y = [1.0, 2.0];
        let h = solve_saturated_cell(psi, y, "test").unwrap();
        assert!((h[0] - 0.0).abs() < 1e-12);
        assert!((h[1] - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_cell_is_an_error() {
        // Equal rows: W carries no information about Z's level.
        let psi = [[0.5, 0.5], [0.5, 0.5]];
        match solve_saturated_cell(psi, [1.0, 2.0], "a=1,x=(0)") {
            Err(Error::NearSingular { cell, .. }) => assert_eq!(cell, "a=1,x=(0)"),
            other => panic!("expected near-singular error, got {other:?}"),
        }
    }

    #[test]
    fn recovers_enumeration_truth_on_simulated_data() {
        let spec = BinaryDgm::reference();
        let truth = spec.true_ate().unwrap().true_ate;
        let data = sample_binary(&spec, 100_000, 23).unwrap();
        let r = saturated_binary(&data, None).unwrap();
        assert!(
            (r.ate_hat - truth).abs() < 0.02,
            "{} vs {truth}",
            r.ate_hat
        );
    }

    #[test]
    fn continuous_outcome_is_rejected() {
        let spec = BinaryDgm::reference();
        let data = sample_binary(&spec, 200, 1).unwrap();
        // Patch in a continuous outcome.
        let mut cols: Vec<(String, Vec<f64>)> = data
            .names()
            .iter()
            .map(|n| (n.clone(), data.col(n).unwrap().to_vec()))
            .collect();
        for (name, col) in cols.iter_mut() {
            if name == "Y" {
                for (i, v) in col.iter_mut().enumerate() {
                    *v += 0.1 + i as f64 * 1e-4;
                }
            }
        }
        let patched = Dataset::from_columns(cols, data.roles().clone()).unwrap();
        match saturated_binary(&patched, None) {
            Err(Error::Validation(msg)) => assert!(msg.contains("binary")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_cells_are_listed() {
        // No treated rows with x = 1.
        let data = Dataset::from_columns(
            vec![
                ("Y".into(), vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
                ("A".into(), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]),
                ("X".into(), vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                ("Z".into(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
                ("W".into(), vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
            ],
            ColumnRoles::scalar("Y", "A", "X", "Z", "W"),
        )
        .unwrap();
        match saturated_binary(&data, None) {
            Err(Error::CellSupport(cells)) => {
                assert!(cells.iter().any(|c| c.contains("a=1") && c.contains("x=(1)")), "{cells:?}");
            }
            other => panic!("expected cell support error, got {other:?}"),
        }
    }
}
