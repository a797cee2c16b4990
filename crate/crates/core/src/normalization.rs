//! Log-resistance and difference normalization.
//!
//! Resistances are mapped to `(ln r - mu_R) / sigma_R`. Generator outputs are
//! differences in that normalized space scaled by the spread of delay-1
//! differences, `sigma_Dbar`, and are turned back into resistances with a
//! residual add. All dataset averages are two-level: first within a series,
//! then across series.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DriftDataset;
use crate::error::{Error, Result};

/// Dataset-derived normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu_r: f64,
    pub sigma_r: f64,
    pub mu_dbar: f64,
    pub sigma_dbar: f64,
}

/// Stats plus the hash of the dataset they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    #[serde(rename = "mu_R")]
    pub mu_r: f64,
    #[serde(rename = "sigma_R")]
    pub sigma_r: f64,
    #[serde(rename = "mu_Dbar")]
    pub mu_dbar: f64,
    #[serde(rename = "sigma_Dbar")]
    pub sigma_dbar: f64,
    pub dataset_hash: String,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.mu_r, self.sigma_r, self.mu_dbar, self.sigma_dbar]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::DegenerateStats("non-finite statistic".into()));
        }
        if self.sigma_r <= 0.0 {
            return Err(Error::DegenerateStats(format!("sigma_R = {}", self.sigma_r)));
        }
        if self.sigma_dbar <= 0.0 {
            return Err(Error::DegenerateStats(format!("sigma_Dbar = {}", self.sigma_dbar)));
        }
        Ok(())
    }

    /// Compute and validate both stat pairs for a dataset.
    pub fn from_dataset(d: &DriftDataset) -> Result<Self> {
        let (mu_r, sigma_r) = compute_resistance_stats(d)?;
        if !(sigma_r > 0.0) {
            return Err(Error::DegenerateStats(format!("sigma_R = {sigma_r}")));
        }
        let partial = NormStats {
            mu_r,
            sigma_r,
            mu_dbar: 0.0,
            sigma_dbar: 1.0,
        };
        let normalized = normalize_dataset(d, &partial)?;
        let (mu_dbar, sigma_dbar) = compute_diff_stats(&normalized)?;
        let stats = NormStats {
            mu_r,
            sigma_r,
            mu_dbar,
            sigma_dbar,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn normalize_resistance(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("resistance must be positive, got {r}")));
        }
        Ok(self.norm_r(r))
    }

    /// Unchecked forward transform for hot paths; `r` must be positive.
    #[inline]
    pub fn norm_r(&self, r: f64) -> f64 {
        (r.ln() - self.mu_r) / self.sigma_r
    }

    #[inline]
    pub fn denormalize_resistance(&self, rbar: f64) -> f64 {
        (self.sigma_r * rbar + self.mu_r).exp()
    }

    #[inline]
    pub fn normalize_diff(&self, rbar_final: f64, rbar_init: f64) -> f64 {
        (rbar_final - rbar_init) / self.sigma_dbar
    }

    #[inline]
    pub fn denormalize_diff(&self, diff: f64, rbar_init: f64) -> f64 {
        rbar_init + diff * self.sigma_dbar
    }

    pub fn with_hash(&self, dataset_hash: impl Into<String>) -> StatsFile {
        StatsFile {
            mu_r: self.mu_r,
            sigma_r: self.sigma_r,
            mu_dbar: self.mu_dbar,
            sigma_dbar: self.sigma_dbar,
            dataset_hash: dataset_hash.into(),
        }
    }
}

impl StatsFile {
    pub fn stats(&self) -> NormStats {
        NormStats {
            mu_r: self.mu_r,
            sigma_r: self.sigma_r,
            mu_dbar: self.mu_dbar,
            sigma_dbar: self.sigma_dbar,
        }
    }

    /// Hash of the canonical JSON, used to tie checkpoints to their stats.
    pub fn stats_hash(&self) -> String {
        crate::dataset::sha256_hex(self.to_json().as_bytes())
    }

    /// serde_json prints f64 with shortest round-trip digits (17 significant at most).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: StatsFile = serde_json::from_str(&text)?;
        file.stats().validate()?;
        Ok(file)
    }

    pub fn check_dataset(&self, dataset_hash: &str) -> Result<()> {
        if self.dataset_hash != dataset_hash {
            return Err(Error::HashMismatch {
                expected: self.dataset_hash.clone(),
                found: dataset_hash.to_string(),
            });
        }
        Ok(())
    }
}

/// Two-level mean and standard deviation of `ln r`.
pub fn compute_resistance_stats(d: &DriftDataset) -> Result<(f64, f64)> {
    if d.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut logs = Vec::with_capacity(d.len());
    for (i, s) in d.series.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::invalid(format!("series {i} is empty")));
        }
        if s.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("series {i} has a non-positive resistance")));
        }
        logs.push(s.values.iter().map(|v| v.ln()).collect::<Vec<_>>());
    }
    let mu = two_level_mean(&logs, |xs| xs.iter().sum::<f64>() / xs.len() as f64);
    let var = two_level_mean(&logs, |xs| {
        xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64
    });
    Ok((mu, var.sqrt()))
}

/// Two-level mean and standard deviation of consecutive differences of an
/// already normalized dataset.
pub fn compute_diff_stats(normalized: &[Vec<f64>]) -> Result<(f64, f64)> {
    if normalized.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut diffs = Vec::with_capacity(normalized.len());
    for (i, s) in normalized.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::invalid(format!("series {i} has fewer than 2 points")));
        }
        diffs.push(s.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>());
    }
    let mu = two_level_mean(&diffs, |xs| xs.iter().sum::<f64>() / xs.len() as f64);
    let var = two_level_mean(&diffs, |xs| {
        xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64
    });
    Ok((mu, var.sqrt()))
}

fn two_level_mean(groups: &[Vec<f64>], inner: impl Fn(&[f64]) -> f64) -> f64 {
    groups.iter().map(|g| inner(g)).sum::<f64>() / groups.len() as f64
}

/// Apply the resistance transform pointwise.
pub fn normalize_dataset(d: &DriftDataset, s: &NormStats) -> Result<Vec<Vec<f64>>> {
    d.series
        .iter()
        .map(|series| series.values.iter().map(|&r| s.normalize_resistance(r)).collect())
        .collect()
}
