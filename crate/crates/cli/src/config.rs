//! Declarative run configuration.
//!
//! One JSON file may hold any subset of the sections below; missing fields
//! take library defaults. A top-level `seed` replaces every section seed, and
//! command-line flags override both.

use std::path::Path;

use anyhow::{Context, Result};
use driftforge::cgan::TrainConfig;
use driftforge::dataset::DatasetConfig;
use driftforge::evaluation::{DEFAULT_CONDITIONS, DEFAULT_DELAYS, DEFAULT_R_INITS, DEFAULT_TOTAL_DELAY};
use driftforge::quantizer::QuantizerConfig;
use driftforge::simulator::{DeviceParams, SteppingMethod};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub device: DeviceParams,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub quantizer: QuantizerConfig,
}

/// Evaluation grids and sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub r_inits: Vec<f64>,
    pub delays: Vec<f64>,
    pub conditions: Vec<u64>,
    pub total_delay: u64,
    pub samples: usize,
    pub bins: usize,
    pub series_delay: f64,
    pub series_per_init: usize,
    pub oracle_method: SteppingMethod,
    /// Largest simulator step; `None` means one step for `exact` and 1 s otherwise.
    pub oracle_max_dt: Option<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            r_inits: DEFAULT_R_INITS.to_vec(),
            delays: DEFAULT_DELAYS.to_vec(),
            conditions: DEFAULT_CONDITIONS.to_vec(),
            total_delay: DEFAULT_TOTAL_DELAY,
            samples: 100,
            bins: 50,
            series_delay: 10.0,
            series_per_init: 5,
            oracle_method: SteppingMethod::Exact,
            oracle_max_dt: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(driftforge::Error::from)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Push the global seed (flag first, then file) into every section.
    pub fn apply_seed(&mut self, flag: Option<u64>) {
        if let Some(s) = flag.or(self.seed) {
            self.seed = Some(s);
            self.dataset.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
    }

    /// Seed used by commands that have no section of their own.
    pub fn quantizer_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
