//! Nonparametric bootstrap over rows with per-replicate substreams.
//!
//! Replicate `r` resamples with the generator for substream `r` of the
//! configured seed, so the standard error is identical across runs and
//! independent of any parallel schedule. Non-convergent or failing
//! replicates are excluded and counted; if more than 20% fail the bootstrap
//! refuses to report inference.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

use super::{EstimateResult, Z_975};

/// Confidence-interval construction for bootstrap inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    #[default]
    Percentile,
    Normal,
}

/// Bootstrap configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub ci_method: CiMethod,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 500,
            seed: 0,
            ci_method: CiMethod::Percentile,
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let k = sorted.len();
    if k == 1 {
        return sorted[0];
    }
    let pos = q * (k - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Runs `estimator` on the full data and on `config.replicates` row
/// resamples, reporting the full-data point estimate with bootstrap standard
/// error and interval.
pub fn bootstrap<F>(data: &Dataset, estimator: F, config: &BootstrapConfig) -> Result<EstimateResult>
where
    F: Fn(&Dataset) -> Result<EstimateResult>,
{
    if config.replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let full = estimator(data)?;
    let n = data.n();
    let mut estimates = Vec::with_capacity(config.replicates);
    let mut failed = 0usize;
    for rep in 0..config.replicates {
        let mut r = rng::substream(config.seed, rep as u64);
        let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let resampled = data.select_rows(&idx);
        match estimator(&resampled) {
            Ok(res) if res.converged && res.ate_hat.is_finite() => estimates.push(res.ate_hat),
            _ => failed += 1,
        }
    }
    if failed * 5 > config.replicates {
        return Err(Error::InferenceUnreliable {
            failed,
            total: config.replicates,
        });
    }

    let mut result = full;
    result.note("bootstrap_replicates", config.replicates as f64);
    result.note("bootstrap_failed", failed as f64);
    if estimates.len() >= 2 {
        let k = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / k;
        let var = estimates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        let se = var.sqrt();
        result.se = Some(se);
        match config.ci_method {
            CiMethod::Percentile => {
                let mut sorted = estimates;
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                result.ci_low = Some(percentile(&sorted, 0.025));
                result.ci_high = Some(percentile(&sorted, 0.975));
            }
            CiMethod::Normal => {
                result.ci_low = Some(result.ate_hat - Z_975 * se);
                result.ci_high = Some(result.ate_hat + Z_975 * se);
            }
        }
    } else {
        result.se = None;
        result.ci_low = None;
        result.ci_high = None;
    }
    Ok(result)
}
