//! Cross-module property tests: round-trip persistence, permutation
//! invariance, the independent interventional oracle for the simulation
//! truth, and the conditional-independence structure of the reference
//! models.

use proptest::prelude::*;

use proxie_core::bridges::{OutcomeBridgeSpec, TreatmentBridgeSpec};
use proxie_core::data::{read_csv, write_csv, ColumnRoles, Dataset};
use proxie_core::dgm::{sample_linear_gaussian, LinearGaussianDgm};
use proxie_core::diagnostics::partial_correlation;
use proxie_core::estimators::{
    naive_ipw, naive_or, proximal_dr, proximal_g, proximal_ipw, saturated_binary,
    two_stage_linear,
};
use proxie_core::moments::GmmConfig;
use proxie_core::rng::derive_seed;

fn arbitrary_dataset() -> impl Strategy<Value = Dataset> {
    let cell = prop_oneof![
        any::<i32>().prop_map(|v| v as f64 / 1000.0),
        -1e12..1e12_f64,
        -1.0..1.0_f64,
    ];
    (1usize..12).prop_flat_map(move |n| {
        let col = prop::collection::vec(cell.clone(), n);
        let a_col = prop::collection::vec(prop_oneof![Just(0.0), Just(1.0)], n);
        (col.clone(), a_col, col.clone(), col.clone(), col.clone(), col).prop_map(
            |(y, a, x, z, w, u)| {
                let mut roles = ColumnRoles::scalar("Y", "A", "X", "Z", "W");
                roles.hidden = vec!["U".into()];
                Dataset::from_columns(
                    vec![
                        ("Y".into(), y),
                        ("A".into(), a),
                        ("X".into(), x),
                        ("Z".into(), z),
                        ("W".into(), w),
                        ("U".into(), u),
                    ],
                    roles,
                )
                .unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_exact(data in arbitrary_dataset()) {
        let file = tempfile::NamedTempFile::new().unwrap();
        write_csv(&data, file.path(), true).unwrap();
        let back = read_csv(file.path(), data.roles().clone()).unwrap();
        prop_assert_eq!(back.n(), data.n());
        for name in data.names() {
            let a = data.col(name).unwrap();
            let b = back.col(name).unwrap();
            for (x, y) in a.iter().zip(b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn treatment_bridge_weights_always_exceed_one(
        phi in prop::collection::vec(-5.0..5.0_f64, 4),
        seed in 0u64..32
    ) {
        let dgm = LinearGaussianDgm::reference_valid_pci();
        let data = sample_linear_gaussian(&dgm, 40, seed).unwrap();
        let spec = TreatmentBridgeSpec::standard(data.roles()).with_phi(phi);
        let a = data.treatment().to_vec();
        for (row, &ai) in a.iter().enumerate() {
            let q = proxie_core::bridges::eval_q(&spec, &data, row, None).unwrap();
            prop_assert!(q > 1.0);
            // The signed weight alternates with the arm.
            let signed = proxie_core::bridges::arm_sign(ai) * q;
            prop_assert_eq!(signed > 0.0, ai == 1.0);
        }
    }
}

#[test]
fn estimators_are_invariant_to_row_order() {
    let dgm = LinearGaussianDgm::reference_valid_pci();
    let data = sample_linear_gaussian(&dgm, 4_000, 77).unwrap();
    // Deterministic shuffle.
    let mut order: Vec<usize> = (0..data.n()).collect();
    for i in (1..order.len()).rev() {
        let j = (derive_seed(5150, i as u64) % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let shuffled = data.select_rows(&order);

    let cfg = GmmConfig::default();
    let h = OutcomeBridgeSpec::linear(data.roles());
    let q = TreatmentBridgeSpec::standard(data.roles());

    let pairs: Vec<(&str, f64, f64)> = vec![
        (
            "naive_or",
            naive_or(&data).unwrap().ate_hat,
            naive_or(&shuffled).unwrap().ate_hat,
        ),
        (
            "naive_ipw",
            naive_ipw(&data, None).unwrap().ate_hat,
            naive_ipw(&shuffled, None).unwrap().ate_hat,
        ),
        (
            "proximal_g",
            proximal_g(&data, &h, &cfg).unwrap().ate_hat,
            proximal_g(&shuffled, &h, &cfg).unwrap().ate_hat,
        ),
        (
            "two_stage_linear",
            two_stage_linear(&data).unwrap().ate_hat,
            two_stage_linear(&shuffled).unwrap().ate_hat,
        ),
        (
            "proximal_ipw",
            proximal_ipw(&data, &q, &cfg).unwrap().ate_hat,
            proximal_ipw(&shuffled, &q, &cfg).unwrap().ate_hat,
        ),
        (
            "proximal_dr",
            proximal_dr(&data, &h, &q, &cfg).unwrap().ate_hat,
            proximal_dr(&shuffled, &h, &q, &cfg).unwrap().ate_hat,
        ),
    ];
    for (name, a, b) in pairs {
        assert!(
            (a - b).abs() <= 1e-7 * (1.0 + a.abs()),
            "{name}: {a} vs {b}"
        );
    }

    let bdgm = proxie_core::dgm::BinaryDgm::reference();
    let bdata = proxie_core::dgm::sample_binary(&bdgm, 4_000, 7).unwrap();
    let mut order: Vec<usize> = (0..bdata.n()).collect();
    order.reverse();
    let brev = bdata.select_rows(&order);
    let s1 = saturated_binary(&bdata, None).unwrap().ate_hat;
    let s2 = saturated_binary(&brev, None).unwrap().ate_hat;
    assert!((s1 - s2).abs() <= 1e-12);
}

/// Independent interventional oracle: draws the exogenous state, fixes the
/// treatment, and pushes it through the structural equations. Written
/// against the model definition, not the production sampler.
fn interventional_oracle(spec: &LinearGaussianDgm, arm: f64, draws: usize, seed: u64) -> (f64, f64) {
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};
    let mut rng = proxie_core::rng::from_seed(seed);
    let std: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let expit = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..draws {
        let x: f64 = std.sample(&mut rng);
        let a_nat = if rng.random::<f64>() < expit(spec.alpha0 + spec.alpha_x * x) {
            1.0
        } else {
            0.0
        };
        let u = spec.mu0 + spec.mu_a * a_nat + spec.mu_x * x + spec.sigma_u * std.sample(&mut rng);
        let z = spec.theta0
            + spec.theta_a * arm
            + spec.theta_u * u
            + spec.theta_x * x
            + spec.sigma_z * std.sample(&mut rng);
        let w = spec.omega0
            + spec.omega_a * arm
            + spec.omega_u * u
            + spec.omega_x * x
            + spec.sigma_w * std.sample(&mut rng);
        let y = spec.beta0
            + spec.beta_a * arm
            + spec.beta_u * u
            + spec.beta_x * x
            + spec.beta_z * z
            + spec.beta_w * w
            + spec.sigma_y * std.sample(&mut rng);
        sum += y;
        sumsq += y * y;
    }
    let nf = draws as f64;
    let mean = sum / nf;
    let var = (sumsq / nf - mean * mean).max(0.0);
    (mean, var / nf)
}

#[test]
fn production_truth_matches_the_interventional_oracle() {
    let mut spec = LinearGaussianDgm::reference_valid_pci();
    spec.beta_z = 0.3;
    spec.omega_a = 0.25;
    let truth = spec.true_ate().unwrap().true_ate;
    let draws = 1_000_000;
    let (m1, v1) = interventional_oracle(&spec, 1.0, draws, 101);
    let (m0, v0) = interventional_oracle(&spec, 0.0, draws, 202);
    let mc = m1 - m0;
    let mc_se = (v1 + v0).sqrt();
    assert!(
        (truth - mc).abs() <= 3.0 * mc_se,
        "closed form {truth} vs oracle {mc} (se {mc_se})"
    );
}

#[test]
fn reference_model_encodes_the_proxy_independencies() {
    // A.5: partial correlation of (Z, Y) given (U, A, X) vanishes.
    // A.6: partial correlation of (W, A) given (U, X) vanishes.
    let spec = LinearGaussianDgm::reference_valid_pci();
    let n = 100_000;
    let d = sample_linear_gaussian(&spec, n, 303).unwrap();
    let (y, a, x) = (d.outcome(), d.treatment(), d.col("X").unwrap());
    let (z, w, u) = (d.col("Z").unwrap(), d.col("W").unwrap(), d.col("U").unwrap());

    let r_zy = partial_correlation(z, y, &[u, a, x]).unwrap();
    let se3 = 1.0 / ((n as f64) - 3.0 - 3.0).sqrt();
    assert!(r_zy.abs() < 4.0 * se3, "corr(Z, Y | U, A, X) = {r_zy}");

    let r_wa = partial_correlation(w, a, &[u, x]).unwrap();
    let se2 = 1.0 / ((n as f64) - 2.0 - 3.0).sqrt();
    assert!(r_wa.abs() < 4.0 * se2, "corr(W, A | U, X) = {r_wa}");
}

#[test]
fn direct_and_iterative_solves_agree_on_simulated_data() {
    let dgm = LinearGaussianDgm::reference_valid_pci();
    for seed in [1u64, 2, 3] {
        let data = sample_linear_gaussian(&dgm, 1_500, seed).unwrap();
        let spec = OutcomeBridgeSpec::linear(data.roles());
        let system = proxie_core::bridges::outcome_bridge_moments(&spec, &data).unwrap();
        let direct = proxie_core::moments::solve_gmm(&data, &system, &GmmConfig::default()).unwrap();
        let gn = proxie_core::moments::solve_gmm(
            &data,
            &system,
            &GmmConfig {
                solver: proxie_core::moments::Solver::GaussNewton,
                theta0: Some(vec![0.5, -0.5, 2.0, 1.0]),
                ..GmmConfig::default()
            },
        )
        .unwrap();
        for i in 0..4 {
            assert!(
                (direct.theta_hat[i] - gn.theta_hat[i]).abs() <= 1e-8,
                "seed {seed}, component {i}"
            );
        }
    }
}
