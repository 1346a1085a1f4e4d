//! Subcommand implementations: simulate, estimate, benchmark, diagnose.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use proxie_core::bridges::{OutcomeBridgeSpec, TreatmentBridgeSpec};
use proxie_core::diagnostics::{
    dimensionality_screen, proxy_checks, weight_diagnostics, TestOutcome,
};
use proxie_core::estimators::{
    naive_ipw, naive_or, proximal_dr, proximal_g, proximal_ipw, saturated_binary,
    two_stage_linear, EstimateResult,
};
use proxie_core::moments::GmmConfig;
use proxie_core::rng::derive_seed;
use proxie_core::{write_csv, Dataset};

use crate::config::{EstimatorConfig, RunConfig};
use crate::CliError;

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create '{}': {e}", dir.display())))
}

fn float_field(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

/// Runs one configured estimator on a dataset.
pub fn run_estimator(cfg: &EstimatorConfig, data: &Dataset) -> proxie_core::Result<EstimateResult> {
    let gmm = GmmConfig::default();
    match cfg {
        EstimatorConfig::NaiveOr => naive_or(data),
        EstimatorConfig::NaiveIpw { bootstrap } => naive_ipw(data, bootstrap.as_ref()),
        EstimatorConfig::ProximalG {
            link,
            h_basis,
            h_instruments,
        } => {
            let mut spec = OutcomeBridgeSpec::linear(data.roles()).with_link(*link);
            if let Some(b) = h_basis {
                spec = spec.with_basis(b.clone());
            }
            if let Some(k) = h_instruments {
                spec = spec.with_instruments(k.clone());
            }
            proximal_g(data, &spec, &gmm)
        }
        EstimatorConfig::TwoStageLinear => two_stage_linear(data),
        EstimatorConfig::ProximalIpw {
            q_basis,
            q_instruments,
        } => {
            let mut spec = TreatmentBridgeSpec::standard(data.roles());
            if let Some(b) = q_basis {
                spec = spec.with_basis(b.clone());
            }
            if let Some(k) = q_instruments {
                spec = spec.with_instruments(k.clone());
            }
            proximal_ipw(data, &spec, &gmm)
        }
        EstimatorConfig::ProximalDr {
            link,
            h_basis,
            h_instruments,
            q_basis,
            q_instruments,
        } => {
            let mut h = OutcomeBridgeSpec::linear(data.roles()).with_link(*link);
            if let Some(b) = h_basis {
                h = h.with_basis(b.clone());
            }
            if let Some(k) = h_instruments {
                h = h.with_instruments(k.clone());
            }
            let mut q = TreatmentBridgeSpec::standard(data.roles());
            if let Some(b) = q_basis {
                q = q.with_basis(b.clone());
            }
            if let Some(k) = q_instruments {
                q = q.with_instruments(k.clone());
            }
            proximal_dr(data, &h, &q, &gmm)
        }
        EstimatorConfig::SaturatedBinary { bootstrap } => saturated_binary(data, bootstrap.as_ref()),
    }
}

/// `proxie simulate`: writes the sampled dataset and prints the ground
/// truth with assumption flags.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let dgm = config
        .dgm
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate requires a 'dgm' block".into()))?
        .resolve()?;
    let sample = config
        .sample
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate requires a 'sample' block (n, seed)".into()))?;
    let seed = seed.unwrap_or(sample.seed);
    let data = dgm.sample(sample.n, seed).map_err(CliError::from_core)?;
    let truth = dgm.true_ate().map_err(CliError::from_core)?;

    ensure_out_dir(out_dir)?;
    let data_path = out_dir.join("data.csv");
    write_csv(&data, &data_path, sample.include_hidden).map_err(CliError::from_core)?;

    let mut truth_text = format!("true_ate = {}\n", truth.true_ate);
    for (assumption, status) in &truth.flags {
        truth_text.push_str(&format!("{}: {}\n", assumption.id(), status));
    }
    fs::write(out_dir.join("truth.txt"), &truth_text)
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!("wrote {} ({} rows, seed {seed})", data_path.display(), data.n());
    print!("{truth_text}");
    Ok(())
}

/// One result row of `proxie estimate`.
struct ResultRow {
    estimator: String,
    result: Result<EstimateResult, String>,
}

fn write_results_csv(
    rows: &[ResultRow],
    n: usize,
    seed: Option<u64>,
    path: &Path,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record([
        "estimator", "ate_hat", "se", "ci_low", "ci_high", "converged", "n", "seed", "error",
    ])
    .map_err(|e| CliError::Io(e.to_string()))?;
    let seed_field = seed.map(|s| s.to_string()).unwrap_or_default();
    for row in rows {
        let record = match &row.result {
            Ok(r) => vec![
                row.estimator.clone(),
                format!("{}", r.ate_hat),
                float_field(r.se),
                float_field(r.ci_low),
                float_field(r.ci_high),
                r.converged.to_string(),
                n.to_string(),
                seed_field.clone(),
                String::new(),
            ],
            Err(msg) => vec![
                row.estimator.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                n.to_string(),
                seed_field.clone(),
                msg.clone(),
            ],
        };
        w.write_record(&record).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

/// `proxie estimate`: one row per configured estimator. Exit code 0 as long
/// as at least one estimator produced a result (non-convergence is a flag,
/// not an error); 2 when all failed hard.
pub fn cmd_estimate(config: &RunConfig, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    if config.estimators.is_empty() {
        return Err(CliError::Config("estimate requires a non-empty 'estimators' list".into()));
    }
    let (data, used_seed) = config.load_dataset(seed)?;
    let mut rows = Vec::new();
    for est in &config.estimators {
        let result = run_estimator(est, &data).map_err(|e| e.to_string());
        rows.push(ResultRow {
            estimator: est.label().to_string(),
            result,
        });
    }
    ensure_out_dir(out_dir)?;
    let path = out_dir.join("results.csv");
    write_results_csv(&rows, data.n(), used_seed, &path)?;

    println!(
        "{:<18} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "estimator", "ate_hat", "se", "ci_low", "ci_high", "converged"
    );
    for row in &rows {
        match &row.result {
            Ok(r) => println!(
                "{:<18} {:>12.6} {:>12} {:>12} {:>12} {:>10}",
                row.estimator,
                r.ate_hat,
                r.se.map_or("-".into(), |v| format!("{v:.6}")),
                r.ci_low.map_or("-".into(), |v| format!("{v:.6}")),
                r.ci_high.map_or("-".into(), |v| format!("{v:.6}")),
                r.converged
            ),
            Err(msg) => println!("{:<18} ERROR: {msg}", row.estimator),
        }
    }
    println!("wrote {}", path.display());

    if rows.iter().all(|r| r.result.is_err()) {
        return Err(CliError::AllEstimatorsFailed);
    }
    Ok(())
}

/// Per-estimator benchmark aggregate.
struct BenchmarkRow {
    estimator: String,
    replications: usize,
    mean_bias: Option<f64>,
    mc_se: Option<f64>,
    empirical_sd: Option<f64>,
    mean_se: Option<f64>,
    coverage: Option<f64>,
    convergence_rate: f64,
    failed: usize,
}

fn aggregate(
    estimator: &str,
    truth: f64,
    replicate_results: &[Option<EstimateResult>],
) -> BenchmarkRow {
    let total = replicate_results.len();
    let mut estimates = Vec::new();
    let mut ses = Vec::new();
    let mut covered = 0usize;
    let mut with_ci = 0usize;
    let mut converged = 0usize;
    let mut failed = 0usize;
    for r in replicate_results {
        match r {
            Some(res) => {
                if res.converged {
                    converged += 1;
                }
                if res.ate_hat.is_finite() {
                    estimates.push(res.ate_hat);
                }
                if let Some(se) = res.se {
                    ses.push(se);
                }
                if let (Some(lo), Some(hi)) = (res.ci_low, res.ci_high) {
                    with_ci += 1;
                    if lo <= truth && truth <= hi {
                        covered += 1;
                    }
                }
            }
            None => failed += 1,
        }
    }
    let k = estimates.len();
    let mean_bias = (k > 0).then(|| estimates.iter().sum::<f64>() / k as f64 - truth);
    let empirical_sd = (k > 1).then(|| {
        let mean = estimates.iter().sum::<f64>() / k as f64;
        (estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k as f64 - 1.0)).sqrt()
    });
    let mc_se = empirical_sd.map(|sd| sd / (k as f64).sqrt());
    let mean_se = (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64);
    let coverage = (with_ci > 0).then(|| covered as f64 / with_ci as f64);
    BenchmarkRow {
        estimator: estimator.to_string(),
        replications: total,
        mean_bias,
        mc_se,
        empirical_sd,
        mean_se,
        coverage,
        convergence_rate: converged as f64 / total as f64,
        failed,
    }
}

/// `proxie benchmark`: R replications with substream seeds, aggregated into
/// bias/coverage rows. Replications run in parallel; aggregation walks the
/// results in replication order, so the output is bitwise identical for any
/// thread count.
pub fn cmd_benchmark(
    config: &RunConfig,
    out_dir: &Path,
    seed: Option<u64>,
    threads: usize,
) -> Result<(), CliError> {
    let dgm_cfg = config
        .dgm
        .as_ref()
        .ok_or_else(|| CliError::Config("benchmark requires a 'dgm' block".into()))?;
    let dgm = dgm_cfg.resolve()?;
    let bench = config
        .benchmark
        .as_ref()
        .ok_or_else(|| CliError::Config("benchmark requires a 'benchmark' block".into()))?;
    if config.estimators.is_empty() {
        return Err(CliError::Config("benchmark requires a non-empty 'estimators' list".into()));
    }
    let master_seed = seed.unwrap_or(bench.seed);
    let truth = dgm.true_ate().map_err(CliError::from_core)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;

    let estimators = &config.estimators;
    // One vector of per-estimator outcomes per replication, indexed by
    // replication so aggregation order is deterministic.
    let per_rep: Vec<Vec<Option<EstimateResult>>> = pool.install(|| {
        (0..bench.replications)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = derive_seed(master_seed, rep as u64);
                match dgm.sample(bench.n, rep_seed) {
                    Ok(data) => estimators
                        .iter()
                        .map(|e| run_estimator(e, &data).ok())
                        .collect(),
                    Err(_) => vec![None; estimators.len()],
                }
            })
            .collect()
    });

    let mut rows = Vec::new();
    for (i, est) in estimators.iter().enumerate() {
        let column: Vec<Option<EstimateResult>> =
            per_rep.iter().map(|rep| rep[i].clone()).collect();
        rows.push(aggregate(est.label(), truth.true_ate, &column));
    }

    ensure_out_dir(out_dir)?;
    let csv_path = out_dir.join("benchmark.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_record([
            "estimator",
            "replications",
            "n",
            "true_ate",
            "mean_bias",
            "mc_se",
            "empirical_sd",
            "mean_se",
            "coverage95",
            "convergence_rate",
            "failed_replicates",
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
        for row in &rows {
            w.write_record(&[
                row.estimator.clone(),
                row.replications.to_string(),
                bench.n.to_string(),
                format!("{}", truth.true_ate),
                float_field(row.mean_bias),
                float_field(row.mc_se),
                float_field(row.empirical_sd),
                float_field(row.mean_se),
                float_field(row.coverage),
                format!("{}", row.convergence_rate),
                row.failed.to_string(),
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }

    // Self-describing run: the resolved configuration with the effective
    // seed, alongside the human-readable table.
    let mut resolved = config.clone();
    if let Some(b) = &mut resolved.benchmark {
        b.seed = master_seed;
    }
    let resolved_json = serde_json::to_string_pretty(&resolved)
        .map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(out_dir.join("resolved_config.json"), resolved_json)
        .map_err(|e| CliError::Io(e.to_string()))?;

    let mut text = String::new();
    text.push_str(&format!(
        "benchmark: {} replications, n = {}, master seed = {master_seed}, true ATE = {}\n",
        bench.replications, bench.n, truth.true_ate
    ));
    text.push_str(&format!(
        "{:<18} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}\n",
        "estimator", "mean_bias", "mc_se", "emp_sd", "mean_se", "cover95", "conv_rate"
    ));
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    for row in &rows {
        text.push_str(&format!(
            "{:<18} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10.3}\n",
            row.estimator,
            fmt(row.mean_bias),
            fmt(row.mc_se),
            fmt(row.empirical_sd),
            fmt(row.mean_se),
            row.coverage.map_or("-".to_string(), |c| format!("{c:.3}")),
            row.convergence_rate
        ));
    }
    fs::write(out_dir.join("benchmark.txt"), &text).map_err(|e| CliError::Io(e.to_string()))?;
    print!("{text}");
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// `proxie diagnose`: proxy association checks, the dimensionality screen,
/// and (when a treatment bridge can be fitted) weight diagnostics.
pub fn cmd_diagnose(config: &RunConfig, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (data, _) = config.load_dataset(seed)?;
    let u_dim = config.diagnose.as_ref().map_or(1, |d| d.declared_u_dim);

    let report = proxy_checks(&data).map_err(CliError::from_core)?;
    let screen = dimensionality_screen(data.roles(), u_dim).map_err(CliError::from_core)?;

    ensure_out_dir(out_dir)?;
    let csv_path = out_dir.join("proxy_checks.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_record([
            "test", "var_a", "var_b", "conditioning", "informative", "status",
            "partial_correlation", "z", "p", "reason",
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
        for t in &report.tests {
            let (status, r, z, p, reason) = match &t.outcome {
                TestOutcome::Computed { partial_correlation, z, p } => (
                    "computed",
                    format!("{partial_correlation}"),
                    format!("{z}"),
                    format!("{p}"),
                    String::new(),
                ),
                TestOutcome::Skipped { reason } => {
                    ("skipped", String::new(), String::new(), String::new(), reason.clone())
                }
            };
            w.write_record(&[
                t.id.clone(),
                t.var_a.clone(),
                t.var_b.clone(),
                t.conditioning.join(" "),
                t.informative.to_string(),
                status.to_string(),
                r,
                z,
                p,
                reason,
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }

    let mut text = String::new();
    text.push_str("proxy association checks\n");
    text.push_str(&format!(
        "{:<16} {:>12} {:>10} {:>12} {:>12}\n",
        "test", "partial_r", "z", "p", "informative"
    ));
    for t in &report.tests {
        match &t.outcome {
            TestOutcome::Computed { partial_correlation, z, p } => {
                text.push_str(&format!(
                    "{:<16} {:>12.5} {:>10.3} {:>12.3e} {:>12}\n",
                    t.id, partial_correlation, z, p, t.informative
                ));
            }
            TestOutcome::Skipped { reason } => {
                text.push_str(&format!("{:<16} skipped: {reason}\n", t.id));
            }
        }
    }
    text.push_str("\nper-proxy relevance evidence\n");
    for (proxy, flag) in &report.flags {
        text.push_str(&format!("  {proxy}: {flag:?}\n"));
    }
    text.push_str(&format!(
        "\ndimensionality screen (declared dim(U) = {u_dim}): Z dim {} -> {:?}; W dim {} -> {:?}\n{}\n",
        screen.z_dim, screen.outcome_bridge_path, screen.w_dim, screen.treatment_bridge_path, screen.note
    ));

    // Weight diagnostics need a fitted treatment bridge; fit the standard
    // form and report, noting failure without aborting the report.
    match fit_standard_q(&data) {
        Ok(fitted) => match weight_diagnostics(&data, &fitted) {
            Ok(wd) => text.push_str(&format!(
                "\nfitted weights: treated n={} min={:.3} max={:.3} ess={:.1}; control n={} min={:.3} max={:.3} ess={:.1}; clamped exponents {}\n",
                wd.treated.n, wd.treated.min, wd.treated.max, wd.treated.ess,
                wd.control.n, wd.control.min, wd.control.max, wd.control.ess,
                wd.clamped_exponents
            )),
            Err(e) => text.push_str(&format!("\nweight diagnostics unavailable: {e}\n")),
        },
        Err(e) => {
            text.push_str(&format!("\nweight diagnostics unavailable: {e}\n"));
        }
    }
    text.push_str(&format!("\ncaveat: {}\n", report.caveat));

    fs::write(out_dir.join("diagnostics.txt"), &text).map_err(|e| CliError::Io(e.to_string()))?;
    print!("{text}");
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn fit_standard_q(data: &Dataset) -> proxie_core::Result<TreatmentBridgeSpec> {
    let spec = TreatmentBridgeSpec::standard(data.roles());
    let system = proxie_core::bridges::treatment_bridge_moments(&spec, data, None)?;
    let fit = proxie_core::moments::solve_gmm(
        data,
        &system,
        &proxie_core::moments::GmmConfig {
            solver: proxie_core::moments::Solver::GaussNewton,
            ..Default::default()
        },
    )?;
    Ok(spec.with_phi(fit.theta_hat.iter().copied().collect()))
}

/// Resolves the worker-thread count: CLI flag, then `PROXIE_THREADS`, then
/// the config's benchmark.parallelism, then the runtime default (0).
pub fn resolve_threads(cli: Option<usize>, config: &RunConfig) -> usize {
    if let Some(t) = cli {
        return t;
    }
    if let Ok(v) = std::env::var("PROXIE_THREADS") {
        if let Ok(t) = v.parse::<usize>() {
            return t;
        }
    }
    config.benchmark.as_ref().map_or(0, |b| b.parallelism)
}

/// Output directory: CLI flag wins over the config.
pub fn resolve_out_dir(cli: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    cli.unwrap_or_else(|| config.output.dir.clone())
}
