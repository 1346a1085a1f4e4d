//! JSON run configuration: one document drives every subcommand.
//!
//! Exactly one of `dgm` (simulation model) or `input` (CSV plus roles) must
//! be present. Estimator entries are tagged by name and carry their bridge
//! specifications as term-string bases (e.g. `["1", "W", "A", "X", "A*Z"]`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use proxie_core::bridges::{Feature, Link};
use proxie_core::data::ColumnRoles;
use proxie_core::dgm::{BinaryDgm, CompletenessFailureDgm, LinearGaussianDgm, TruthRecord};
use proxie_core::estimators::BootstrapConfig;
use proxie_core::Dataset;

use crate::CliError;

/// Simulation model block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgmConfig {
    LinearGaussian { params: Box<LinearGaussianDgm> },
    Binary { params: Box<BinaryDgm> },
    CompletenessFailure { params: Box<CompletenessFailureDgm> },
    /// Named built-in configuration: `valid_pci`, `misspec_fixture`,
    /// `null`, `binary`, or `completeness_failure`.
    Preset { name: String },
}

/// The preset names accepted by `DgmConfig::Preset`.
pub const PRESETS: [&str; 5] = [
    "valid_pci",
    "misspec_fixture",
    "null",
    "binary",
    "completeness_failure",
];

#[derive(Debug, Clone)]
pub enum ResolvedDgm {
    LinearGaussian(LinearGaussianDgm),
    Binary(BinaryDgm),
    CompletenessFailure(CompletenessFailureDgm),
}

impl DgmConfig {
    pub fn resolve(&self) -> Result<ResolvedDgm, CliError> {
        Ok(match self {
            DgmConfig::LinearGaussian { params } => ResolvedDgm::LinearGaussian((**params).clone()),
            DgmConfig::Binary { params } => ResolvedDgm::Binary((**params).clone()),
            DgmConfig::CompletenessFailure { params } => {
                ResolvedDgm::CompletenessFailure((**params).clone())
            }
            DgmConfig::Preset { name } => match name.as_str() {
                "valid_pci" => ResolvedDgm::LinearGaussian(LinearGaussianDgm::reference_valid_pci()),
                "misspec_fixture" => {
                    ResolvedDgm::LinearGaussian(LinearGaussianDgm::reference_misspec_fixture())
                }
                "null" => ResolvedDgm::LinearGaussian(LinearGaussianDgm::reference_null()),
                "binary" => ResolvedDgm::Binary(BinaryDgm::reference()),
                "completeness_failure" => {
                    ResolvedDgm::CompletenessFailure(CompletenessFailureDgm::reference())
                }
                other => {
                    return Err(CliError::Config(format!(
                        "unknown dgm preset '{other}'; expected one of {PRESETS:?}"
                    )))
                }
            },
        })
    }
}

impl ResolvedDgm {
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset, proxie_core::Error> {
        match self {
            ResolvedDgm::LinearGaussian(s) => proxie_core::dgm::sample_linear_gaussian(s, n, seed),
            ResolvedDgm::Binary(s) => proxie_core::dgm::sample_binary(s, n, seed),
            ResolvedDgm::CompletenessFailure(s) => {
                proxie_core::dgm::sample_completeness_failure(s, n, seed)
            }
        }
    }

    pub fn true_ate(&self) -> Result<TruthRecord, proxie_core::Error> {
        match self {
            ResolvedDgm::LinearGaussian(s) => s.true_ate(),
            ResolvedDgm::Binary(s) => s.true_ate(),
            ResolvedDgm::CompletenessFailure(s) => s.true_ate(),
        }
    }
}

/// Observed-data input block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub csv: PathBuf,
    pub roles: ColumnRoles,
}

/// Sampling block used by `simulate` and by `estimate`/`diagnose` when the
/// dataset comes from a simulation model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub include_hidden: bool,
}

fn default_true() -> bool {
    true
}

/// One estimator request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    NaiveOr,
    NaiveIpw {
        #[serde(default)]
        bootstrap: Option<BootstrapConfig>,
    },
    ProximalG {
        #[serde(default)]
        link: Link,
        #[serde(default)]
        h_basis: Option<Vec<Feature>>,
        #[serde(default)]
        h_instruments: Option<Vec<Feature>>,
    },
    TwoStageLinear,
    ProximalIpw {
        #[serde(default)]
        q_basis: Option<Vec<Feature>>,
        #[serde(default)]
        q_instruments: Option<Vec<Feature>>,
    },
    ProximalDr {
        #[serde(default)]
        link: Link,
        #[serde(default)]
        h_basis: Option<Vec<Feature>>,
        #[serde(default)]
        h_instruments: Option<Vec<Feature>>,
        #[serde(default)]
        q_basis: Option<Vec<Feature>>,
        #[serde(default)]
        q_instruments: Option<Vec<Feature>>,
    },
    SaturatedBinary {
        #[serde(default)]
        bootstrap: Option<BootstrapConfig>,
    },
}

impl EstimatorConfig {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorConfig::NaiveOr => "naive_or",
            EstimatorConfig::NaiveIpw { .. } => "naive_ipw",
            EstimatorConfig::ProximalG { .. } => "proximal_g",
            EstimatorConfig::TwoStageLinear => "two_stage_linear",
            EstimatorConfig::ProximalIpw { .. } => "proximal_ipw",
            EstimatorConfig::ProximalDr { .. } => "proximal_dr",
            EstimatorConfig::SaturatedBinary { .. } => "saturated_binary",
        }
    }
}

/// Benchmark block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub replications: usize,
    pub n: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub parallelism: usize,
}

/// Diagnose block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default = "default_u_dim")]
    pub declared_u_dim: usize,
}

fn default_u_dim() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir() }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dgm: Option<DgmConfig>,
    #[serde(default)]
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub sample: Option<SampleConfig>,
    #[serde(default)]
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses and validates a configuration file, reporting the JSON path of
    /// any schema violation.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config '{}': {e}", path.display())))?;
        let mut deserializer = serde_json::Deserializer::from_str(&text);
        let config: RunConfig = serde_path_to_error::deserialize(&mut deserializer)
            .map_err(|e| CliError::Config(format!("config schema error at {}: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.dgm, &self.input) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "config must contain exactly one of 'dgm' and 'input', found both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "config must contain exactly one of 'dgm' and 'input', found neither".into(),
                ))
            }
            _ => {}
        }
        if let Some(d) = &self.dgm {
            // Surface parameter-level problems at config time.
            let resolved = d.resolve()?;
            resolved
                .true_ate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(b) = &self.benchmark {
            if b.replications == 0 {
                return Err(CliError::Config("benchmark.replications must be at least 1".into()));
            }
            if b.n == 0 {
                return Err(CliError::Config("benchmark.n must be at least 1".into()));
            }
        }
        if let Some(s) = &self.sample {
            if s.n == 0 {
                return Err(CliError::Config("sample.n must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// The dataset a non-benchmark command operates on, plus the seed that
    /// produced it (when simulated).
    pub fn load_dataset(&self, seed_override: Option<u64>) -> Result<(Dataset, Option<u64>), CliError> {
        if let Some(input) = &self.input {
            let data = proxie_core::read_csv(&input.csv, input.roles.clone())
                .map_err(CliError::from_core)?;
            return Ok((data, None));
        }
        let dgm = self.dgm.as_ref().expect("validated").resolve()?;
        let sample = self.sample.as_ref().ok_or_else(|| {
            CliError::Config("a 'sample' block (n, seed) is required when using a dgm".into())
        })?;
        let seed = seed_override.unwrap_or(sample.seed);
        let data = dgm.sample(sample.n, seed).map_err(CliError::from_core)?;
        Ok((data, Some(seed)))
    }
}
