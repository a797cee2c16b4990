//! Drift datasets: generation, CSV storage and the JSON metadata sidecar.
//!
//! CSV layout is `series_id,t_seconds,resistance_ohms`, sorted by series then
//! time. Resistances are written with 17 significant digits so a file read
//! back reproduces the in-memory dataset bit for bit, and the dataset hash is
//! the SHA-256 of exactly those bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::simulator::{sample_count, simulate_series, DeviceParams, DriftSeries, SteppingMethod};

pub const CSV_HEADER: &str = "series_id,t_seconds,resistance_ohms";

/// Generation settings. Defaults reproduce the reference 5000-series dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub count: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub t_tot: f64,
    pub t_sample: f64,
    pub method: SteppingMethod,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 5000,
            r_min: 100.0,
            r_max: 750_000.0,
            t_tot: 1000.0,
            t_sample: 1.0,
            method: SteppingMethod::TauLeap,
            seed: 0,
        }
    }
}

/// Metadata sidecar written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub params: DeviceParams,
    pub t_tot: f64,
    pub t_sample: f64,
    pub count: usize,
    #[serde(default)]
    pub r_min: Option<f64>,
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default)]
    pub method: Option<SteppingMethod>,
}

/// A set of equally sampled drift series.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDataset {
    pub series: Vec<DriftSeries>,
    pub t_tot: f64,
    pub t_sample: f64,
    pub seed: u64,
}

/// Evenly spaced initial resistances over `[r_min, r_max]`.
pub fn initial_grid(count: usize, r_min: f64, r_max: f64) -> Vec<f64> {
    if count == 1 {
        return vec![r_min];
    }
    let span = r_max - r_min;
    (0..count)
        .map(|i| r_min + span * i as f64 / (count - 1) as f64)
        .collect()
}

/// Simulate `cfg.count` series from a deterministic grid of initial resistances.
///
/// Series `i` draws from stream `(seed, i)`, so the result is independent of
/// the rayon pool size.
pub fn generate_dataset(cfg: &DatasetConfig, p: &DeviceParams) -> Result<DriftDataset> {
    p.validate()?;
    if cfg.count < 1 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if !(cfg.r_min > 0.0 && cfg.r_min < cfg.r_max) {
        return Err(Error::invalid(format!(
            "need 0 < r_min < r_max, got [{}, {}]",
            cfg.r_min, cfg.r_max
        )));
    }
    if cfg.r_max >= 1.0 / p.g_parallel {
        return Err(Error::invalid(format!(
            "r_max {} is outside the readout range (< {})",
            cfg.r_max,
            1.0 / p.g_parallel
        )));
    }
    sample_count(cfg.t_tot, cfg.t_sample)?;
    let grid = initial_grid(cfg.count, cfg.r_min, cfg.r_max);
    let series = grid
        .par_iter()
        .enumerate()
        .map(|(i, &r0)| {
            let mut rng = rng::stream(cfg.seed, i as u64);
            simulate_series(r0, cfg.t_tot, cfg.t_sample, cfg.method, p, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftDataset {
        series,
        t_tot: cfg.t_tot,
        t_sample: cfg.t_sample,
        seed: cfg.seed,
    })
}

impl DriftDataset {
    /// Build from raw series, checking shared length and positivity.
    pub fn from_series(series: Vec<DriftSeries>, t_sample: f64, seed: u64) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::invalid("dataset must contain at least one series"))?;
        let len = first.len();
        if len == 0 {
            return Err(Error::invalid("series must be non-empty"));
        }
        for (i, s) in series.iter().enumerate() {
            if s.len() != len {
                return Err(Error::invalid(format!(
                    "series {i} has {} points, expected {len}",
                    s.len()
                )));
            }
            if s.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid(format!("series {i} has a non-positive resistance")));
            }
        }
        Ok(Self {
            t_tot: (len - 1) as f64 * t_sample,
            series,
            t_sample,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Points per series.
    pub fn series_len(&self) -> usize {
        self.series.first().map_or(0, DriftSeries::len)
    }

    /// Smallest and largest resistance anywhere in the dataset.
    pub fn resistance_range(&self) -> (f64, f64) {
        self.series
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Values of every series at sample index `k`.
    pub fn values_at(&self, k: usize) -> Vec<f64> {
        self.series.iter().map(|s| s.values[k]).collect()
    }

    /// Canonical CSV text.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * self.series_len() * 40);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (id, s) in self.series.iter().enumerate() {
            for (k, v) in s.values.iter().enumerate() {
                let t = k as f64 * self.t_sample;
                let _ = writeln!(out, "{id},{t},{v:.16e}");
            }
        }
        out
    }

    /// SHA-256 of the canonical CSV bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_csv_string().as_bytes())
    }

    pub fn meta(&self, params: &DeviceParams) -> DatasetMeta {
        DatasetMeta {
            seed: self.seed,
            params: *params,
            t_tot: self.t_tot,
            t_sample: self.t_sample,
            count: self.len(),
            r_min: None,
            r_max: None,
            method: None,
        }
    }

    /// Write the CSV to `path`; returns the content hash.
    pub fn write_csv(&self, path: &Path) -> Result<String> {
        let text = self.to_csv_string();
        fs::write(path, &text).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Read a CSV written by [`Self::write_csv`].
    pub fn read_csv(path: &Path, meta: Option<&DatasetMeta>) -> Result<Self> {
        let bad = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
            return Err(bad(format!("unexpected header {:?}", headers)));
        }
        let mut series: Vec<Vec<f64>> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != 3 {
                return Err(bad(format!("row {} has {} fields", line + 2, record.len())));
            }
            let parse = |i: usize| -> Result<f64> {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e}", line + 2)))
            };
            let id: usize = record[0]
                .trim()
                .parse()
                .map_err(|e| bad(format!("row {}: {e}", line + 2)))?;
            let t = parse(1)?;
            let r = parse(2)?;
            if id == series.len() {
                series.push(Vec::new());
            } else if id + 1 != series.len() {
                return Err(bad(format!("row {}: series ids not sorted", line + 2)));
            }
            let current = series.last_mut().expect("pushed above");
            if id == 0 {
                times.push(t);
            } else if times.get(current.len()).copied() != Some(t) {
                return Err(bad(format!("row {}: time grid differs between series", line + 2)));
            }
            current.push(r);
        }
        if series.is_empty() {
            return Err(bad("no data rows".into()));
        }
        let t_sample = match meta {
            Some(m) => m.t_sample,
            None if times.len() >= 2 => times[1] - times[0],
            None => 1.0,
        };
        let seed = meta.map_or(0, |m| m.seed);
        let series = series
            .into_iter()
            .map(|values| DriftSeries {
                r_init: values[0],
                t_sample,
                values,
            })
            .collect();
        Self::from_series(series, t_sample, seed).map_err(|e| bad(e.to_string()))
    }
}

impl DatasetMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Metadata sidecar path for a dataset CSV (`foo.csv` -> `foo.meta.json`).
pub fn meta_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
