//! JSON experiment configuration: model description plus run-length,
//! estimation, and output knobs. Models carry matrix-valued fields, which is
//! why the configuration is a file rather than flags.

use std::path::PathBuf;

use serde::Deserialize;

use crate::dps::DpsSpec;
use crate::env::GeneratorMatrix;
use crate::service::ServiceDistribution;
use crate::workload::{ModelError, ModelSpec, DEFAULT_P0_TOL};

use super::HarnessError;

/// Default sweep points.
pub const DEFAULT_N_VALUES: [u64; 4] = [10, 50, 100, 200];
/// Default number of stationary snapshots recorded per sweep run.
pub const DEFAULT_SWEEP_SNAPSHOTS: usize = 20_000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Optional declared mode; must match the subcommand when present.
    #[serde(default)]
    pub mode: Option<String>,
    /// Sweep points; strictly increasing, all at least 2.
    #[serde(default)]
    pub n_values: Option<Vec<u64>>,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Optional per-N horizons for sweeps (aligned with `n_values`);
    /// heavier N need longer runs since the relaxation time grows with N.
    #[serde(default)]
    pub horizon_per_n: Option<Vec<f64>>,
    /// Defaults to 10% of the horizon.
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default)]
    pub batches: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub replications: Option<usize>,
    /// Stationary snapshots per run (distributional diagnostics).
    #[serde(default)]
    pub snapshots: Option<usize>,
    /// Per-state empty probabilities, enabling the exact mean-workload
    /// formula in `analyze`.
    #[serde(default)]
    pub p0: Option<Vec<f64>>,
    #[serde(default)]
    pub p0_tolerance: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Negative-control hook for `validate`: the simulator runs with these
    /// class rates while the checks use the spec's own `mu`.
    #[serde(default)]
    pub validate_sim_mu: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    /// Single-class modulated queue with per-state service distributions.
    Workload {
        env: Vec<Vec<f64>>,
        lambda: Vec<f64>,
        capacities: Vec<f64>,
        service: Vec<ServiceDistribution>,
    },
    /// Multi-class DPS queue; `alpha` is class-major (K rows of D entries).
    Dps {
        env: Vec<Vec<f64>>,
        lambda: Vec<f64>,
        capacities: Vec<f64>,
        alpha: Vec<Vec<f64>>,
        mu: Vec<f64>,
        g: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub enum BuiltModel {
    Workload(ModelSpec),
    Dps(DpsSpec),
}

impl BuiltModel {
    pub fn model(&self) -> &ModelSpec {
        match self {
            BuiltModel::Workload(m) => m,
            BuiltModel::Dps(s) => s.model(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BuiltModel::Workload(_) => "workload",
            BuiltModel::Dps(_) => "dps",
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<BuiltModel, ModelError> {
        match self {
            ModelConfig::Workload { env, lambda, capacities, service } => {
                let env = GeneratorMatrix::new(env)?;
                Ok(BuiltModel::Workload(ModelSpec::new(
                    env,
                    lambda.clone(),
                    capacities.clone(),
                    service.clone(),
                )?))
            }
            ModelConfig::Dps { env, lambda, capacities, alpha, mu, g } => {
                let env = GeneratorMatrix::new(env)?;
                Ok(BuiltModel::Dps(DpsSpec::new(
                    env,
                    lambda.clone(),
                    capacities.clone(),
                    alpha.clone(),
                    mu.clone(),
                    g.clone(),
                )?))
            }
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            HarnessError::Config(format!("invalid config {}: {e}", path.display()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), HarnessError> {
        if let Some(ns) = &self.n_values {
            if ns.is_empty() {
                return Err(HarnessError::Config("n_values must be nonempty".into()));
            }
            for pair in ns.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(HarnessError::Config(
                        "n_values must be strictly increasing".into(),
                    ));
                }
            }
            if ns[0] < 2 {
                return Err(HarnessError::Config("n_values entries must be >= 2".into()));
            }
            if let Some(hs) = &self.horizon_per_n {
                if hs.len() != ns.len() {
                    return Err(HarnessError::Config(
                        "horizon_per_n must align with n_values".into(),
                    ));
                }
            }
        }
        if let (Some(h), Some(w)) = (self.horizon, self.warmup) {
            if w >= h {
                return Err(HarnessError::Config(
                    "warmup must be below the horizon".into(),
                ));
            }
        }
        if let Some(r) = self.replications {
            if r == 0 {
                return Err(HarnessError::Config("replications must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn ensure_mode(&self, subcommand: &str) -> Result<(), HarnessError> {
        if let Some(mode) = &self.mode {
            if mode != subcommand {
                return Err(HarnessError::Config(format!(
                    "config declares mode {mode:?} but the {subcommand} command was invoked"
                )));
            }
        }
        Ok(())
    }

    pub fn horizon_required(&self) -> Result<f64, HarnessError> {
        self.horizon.ok_or_else(|| {
            HarnessError::Config("this command requires a horizon in the config".into())
        })
    }

    pub fn n_values_or_default(&self) -> Vec<u64> {
        self.n_values.clone().unwrap_or_else(|| DEFAULT_N_VALUES.to_vec())
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn replications_or_default(&self) -> usize {
        self.replications.unwrap_or(1)
    }

    pub fn p0_tolerance_or_default(&self) -> f64 {
        self.p0_tolerance.unwrap_or(DEFAULT_P0_TOL)
    }
}
