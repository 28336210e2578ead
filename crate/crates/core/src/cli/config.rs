//! Configuration files. Every table rejects unknown keys.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::blackbox::{make_synthetic, remote_model, BlackBoxModel, RemoteEndpoint, SyntheticModelSpec};
use crate::evidence::SamplingStrategy;
use crate::ll144::Ll144Config;
use crate::testing::{AuditSpec, Presumption, TestMethod};

/// Bearer-token variable consulted when an endpoint names none.
pub const DEFAULT_TOKEN_ENV: &str = "BBAUDIT_TOKEN";

/// Exactly one of a zoo model or a remote endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    #[serde(default)]
    pub synthetic: Option<SyntheticModelSpec>,
    #[serde(default)]
    pub remote: Option<RemoteEndpoint>,
}

impl ModelSource {
    pub fn build(&self) -> Result<Box<dyn BlackBoxModel>, CliError> {
        match (&self.synthetic, &self.remote) {
            (Some(s), None) => {
                let z = make_synthetic(s).map_err(|e| CliError::Config(format!("model.synthetic: {e}")))?;
                Ok(Box::new(z.model))
            }
            (None, Some(r)) => {
                let mut r = r.clone();
                if r.token_env.is_none() && std::env::var_os(DEFAULT_TOKEN_ENV).is_some() {
                    r.token_env = Some(DEFAULT_TOKEN_ENV.into());
                }
                let m = remote_model(&r).map_err(|e| CliError::Config(format!("model.remote: {e}")))?;
                Ok(Box::new(m))
            }
            _ => Err(CliError::Config("model: give exactly one of `synthetic` or `remote`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub strategy: SamplingStrategy,
    /// Queries to make (inputs for non-adaptive strategies).
    pub n: usize,
    /// Hard cap on queries; none means unlimited.
    #[serde(default)]
    pub budget: Option<usize>,
}

fn default_name() -> String {
    "audit".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Base name of the report files.
    #[serde(default = "default_name")]
    pub name: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { name: default_name() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    pub sampling: SamplingPlan,
    pub audit: AuditSpec,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub audit: AuditSpec,
    pub n_per_group: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Zoo models to evaluate, one table row each.
    #[serde(default)]
    pub grid: Vec<SyntheticModelSpec>,
    /// A single model instead of (or besides) the grid.
    #[serde(default)]
    pub model: Option<ModelSource>,
}

impl PowerConfig {
    /// The grid to evaluate. Remote models are refused: their ground truth
    /// is unknowable, so no error rate can be measured against them.
    pub fn grid(&self) -> Result<Vec<SyntheticModelSpec>, CliError> {
        let mut grid = self.grid.clone();
        if let Some(m) = &self.model {
            if m.remote.is_some() {
                return Err(CliError::Config(
                    "model.remote: power analysis needs synthetic models with known ground truth".into(),
                ));
            }
            grid.extend(m.synthetic.clone());
        }
        if grid.is_empty() {
            return Err(CliError::Config("grid: no synthetic models to evaluate".into()));
        }
        Ok(grid)
    }
}

fn d_eta() -> f64 {
    0.1
}
fn d_zeta() -> f64 {
    0.05
}
fn d_n() -> usize {
    100
}
fn d_trials() -> usize {
    500
}
fn d_base() -> f64 {
    0.5
}
fn d_gaps() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3]
}
fn d_methods() -> Vec<TestMethod> {
    vec![TestMethod::BoundaryZ, TestMethod::ExactBinomialBoundary]
}

/// Calibration suite: `GroupThreshold` models at rates `base_rate + gap` and
/// `base_rate`, audited for statistical parity with each method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "d_eta")]
    pub threshold: f64,
    #[serde(default = "d_zeta")]
    pub significance: f64,
    #[serde(default = "d_n")]
    pub n_per_group: usize,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_base")]
    pub base_rate: f64,
    #[serde(default = "d_gaps")]
    pub gaps: Vec<f64>,
    #[serde(default = "d_methods")]
    pub methods: Vec<TestMethod>,
    #[serde(default = "d_presumption")]
    pub presumption: Presumption,
    #[serde(default)]
    pub seed: u64,
}

fn d_presumption() -> Presumption {
    Presumption::Compliance
}

impl Default for SimulateConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

/// LL144 configuration file: the audit settings plus where the data and
/// (for test data) the model live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ll144File {
    /// Historical CSV, relative to the configuration file.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSource>,
    pub audit: Ll144Config,
}
