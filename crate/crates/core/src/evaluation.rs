//! Evaluation protocols comparing the generator with the simulator.
//!
//! Every report is a list of serializable rows written as CSV. Grid cells
//! draw from independent random streams indexed by cell, so reports do not
//! depend on the thread count.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgan::GanModel;
use crate::dataset::DriftDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::simulator::{sample_final, DeviceParams, SteppingMethod};

pub const DEFAULT_R_INITS: [f64; 6] = [1e2, 1e3, 1e4, 1e5, 3e5, 7.5e5];
pub const DEFAULT_DELAYS: [f64; 5] = [1.0, 10.0, 100.0, 500.0, 1000.0];
pub const DEFAULT_CONDITIONS: [u64; 5] = [5, 10, 100, 250, 500];
pub const DEFAULT_TOTAL_DELAY: u64 = 500;

/// Conditions shared by the moment and series protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub r_inits: Vec<f64>,
    pub delays: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            r_inits: DEFAULT_R_INITS.to_vec(),
            delays: DEFAULT_DELAYS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gan,
    Oracle,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Gan => "gan",
            Source::Oracle => "oracle",
        })
    }
}

/// Something that draws a resistance after a delay, given a starting one.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    Gan(&'a GanModel),
    Oracle {
        params: DeviceParams,
        method: SteppingMethod,
        /// Largest simulator step; shorter delays use a single step.
        max_dt: f64,
    },
}

impl Sampler<'_> {
    pub fn oracle(params: DeviceParams) -> Self {
        Sampler::Oracle {
            params,
            method: SteppingMethod::TauLeap,
            max_dt: 1.0,
        }
    }

    pub fn source(&self) -> Source {
        match self {
            Sampler::Gan(_) => Source::Gan,
            Sampler::Oracle { .. } => Source::Oracle,
        }
    }

    pub fn sample(&self, r_init: f64, delay: f64, rng: &mut Rng) -> Result<f64> {
        match self {
            Sampler::Gan(m) => m.sample_ohms(r_init, delay, rng),
            Sampler::Oracle { params, method, max_dt } => sample_final(r_init, delay, *max_dt, *method, params, rng),
        }
    }
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub r_init: f64,
    pub delay: f64,
    pub source: Source,
    pub mean_final: f64,
    pub std_final: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    /// Keep only the rows matching `keep`.
    pub fn filtered(&self, keep: impl Fn(&MomentRow) -> bool) -> Self {
        Self {
            rows: self.rows.iter().copied().filter(|r| keep(r)).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

/// Per-cell final-resistance moments from `n` single-shot samples.
pub fn conditioned_moments(sampler: &Sampler, grid: &Grid, n: usize, seed: u64) -> Result<MomentReport> {
    if n < 2 {
        return Err(Error::invalid("need at least 2 samples per cell"));
    }
    let cells: Vec<(f64, f64)> = grid
        .r_inits
        .iter()
        .flat_map(|&r| grid.delays.iter().map(move |&d| (r, d)))
        .collect();
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(r_init, delay))| {
            let mut rng = rng::stream(seed, i as u64);
            let xs = (0..n)
                .map(|_| sampler.sample(r_init, delay, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (mean_final, std_final) = mean_std(&xs);
            Ok(MomentRow {
                r_init,
                delay,
                source: sampler.source(),
                mean_final,
                std_final,
                n_samples: n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentReport { rows })
}

/// Mean absolute log-space errors between two moment reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentMatch {
    pub mae_mu: f64,
    pub mae_sigma: f64,
    pub cells: usize,
}

pub fn moment_match_score(gan: &MomentReport, oracle: &MomentReport) -> Result<MomentMatch> {
    if gan.rows.len() != oracle.rows.len() || gan.rows.is_empty() {
        return Err(Error::invalid(format!(
            "reports cover different grids ({} vs {} cells)",
            gan.rows.len(),
            oracle.rows.len()
        )));
    }
    let (mut mu, mut sigma) = (0.0, 0.0);
    for (g, o) in gan.rows.iter().zip(&oracle.rows) {
        if g.r_init != o.r_init || g.delay != o.delay {
            return Err(Error::invalid(format!(
                "cell mismatch: ({}, {}) vs ({}, {})",
                g.r_init, g.delay, o.r_init, o.delay
            )));
        }
        mu += (g.mean_final.ln() - o.mean_final.ln()).abs();
        sigma += (g.std_final.ln() - o.std_final.ln()).abs();
    }
    let n = gan.rows.len() as f64;
    Ok(MomentMatch {
        mae_mu: mu / n,
        mae_sigma: sigma / n,
        cells: gan.rows.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub r_init: f64,
    pub delay: u64,
    pub steps: u64,
    pub mean_change: f64,
    pub std_change: f64,
    pub total_delay: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    /// Max minus min of the mean change across delay conditions, averaged over initial resistances.
    pub fn spread(&self) -> f64 {
        let mut inits: Vec<f64> = self.rows.iter().map(|r| r.r_init).collect();
        inits.dedup();
        let per_init: Vec<f64> = inits
            .iter()
            .map(|&r0| {
                let changes = self.rows.iter().filter(|r| r.r_init == r0).map(|r| r.mean_change);
                let (lo, hi) = changes.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
                hi - lo
            })
            .collect();
        per_init.iter().sum::<f64>() / per_init.len().max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

/// Change after `total` seconds reached in `total / d` closed-loop steps of `d`.
pub fn delay_consistency(
    model: &GanModel,
    r_inits: &[f64],
    total: u64,
    conditions: &[u64],
    n_samples: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be positive"));
    }
    for &d in conditions {
        if d == 0 || !total.is_multiple_of(d) {
            return Err(Error::invalid(format!("delay condition {d} does not divide total {total}")));
        }
    }
    let cells: Vec<(f64, u64)> = r_inits
        .iter()
        .flat_map(|&r| conditions.iter().map(move |&d| (r, d)))
        .collect();
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(r_init, delay))| {
            let mut rng = rng::stream(seed, i as u64);
            let steps = total / delay;
            let changes = (0..n_samples)
                .map(|_| {
                    let s = model.generate_sequence(r_init, delay as f64, steps as usize, &mut rng)?;
                    Ok(s.values[steps as usize] - r_init)
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean_change, std_change) = mean_std(&changes);
            Ok(ConsistencyRow {
                r_init,
                delay,
                steps,
                mean_change,
                std_change,
                total_delay: delay * steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub delay: f64,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub delay: f64,
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
}

/// Per-delay histograms on a shared set of equal-width bins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HistogramReport {
    pub rows: Vec<HistogramRow>,
    pub summaries: Vec<HistogramSummary>,
}

impl HistogramReport {
    pub fn counts(&self, delay: f64) -> Vec<usize> {
        self.rows.iter().filter(|r| r.delay == delay).map(|r| r.count).collect()
    }

    /// Write the histogram to `path` and the per-delay moments next to it.
    pub fn write_csv(&self, path: &Path, summary_path: &Path) -> Result<()> {
        write_rows(path, &self.rows)?;
        write_rows(summary_path, &self.summaries)
    }
}

/// Histogram `(delay, values)` groups on bins spanning all values.
pub fn final_value_histogram(groups: &[(f64, Vec<f64>)], bins: usize) -> Result<HistogramReport> {
    if bins == 0 {
        return Err(Error::invalid("bins must be at least 1"));
    }
    let all = groups.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if groups.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numerical("non-finite value in histogram input".into()));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut report = HistogramReport::default();
    for (delay, values) in groups {
        let mut counts = vec![0usize; bins];
        for &x in values {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        for (bin, count) in counts.into_iter().enumerate() {
            report.rows.push(HistogramRow {
                delay: *delay,
                bin,
                lower: lo + bin as f64 * width,
                upper: lo + (bin + 1) as f64 * width,
                count,
            });
        }
        let (mean, std) = mean_std(values);
        report.summaries.push(HistogramSummary {
            delay: *delay,
            mean,
            std,
            n_samples: values.len(),
        });
    }
    Ok(report)
}

/// Dataset values at the given delays (multiples of the sampling interval).
pub fn dataset_finals(ds: &DriftDataset, delays: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
    delays
        .iter()
        .map(|&d| {
            let k = d / ds.t_sample;
            if d < 0.0 || k.fract() != 0.0 || k as usize >= ds.series_len() {
                return Err(Error::invalid(format!("delay {d} is not on the dataset time grid")));
            }
            Ok((d, ds.values_at(k as usize)))
        })
        .collect()
}

/// `per_init` single-shot samples per initial resistance at each delay.
pub fn sampler_finals(
    sampler: &Sampler,
    r_inits: &[f64],
    delays: &[f64],
    per_init: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    delays
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut rng = rng::stream(seed, i as u64);
            let mut values = Vec::with_capacity(r_inits.len() * per_init);
            for &r0 in r_inits {
                for _ in 0..per_init {
                    values.push(if d == 0.0 { r0 } else { sampler.sample(r0, d, &mut rng)? });
                }
            }
            Ok((d, values))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub r_init: f64,
    pub series: usize,
    pub step: usize,
    pub t_seconds: f64,
    pub resistance_ohms: f64,
}

/// Closed-loop steps needed to cover 1000 s plus one delay.
pub fn series_steps(d: f64) -> usize {
    ((1000.0 + d) / d).ceil() as usize
}

/// `per_init` closed-loop trajectories per initial resistance.
pub fn series_dump(model: &GanModel, r_inits: &[f64], d: f64, per_init: usize, seed: u64) -> Result<Vec<SeriesRow>> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("delay must be positive, got {d}")));
    }
    let steps = series_steps(d);
    let per_cell = r_inits
        .par_iter()
        .enumerate()
        .map(|(i, &r_init)| {
            let mut rng = rng::stream(seed, i as u64);
            let mut rows = Vec::with_capacity(per_init * (steps + 1));
            for series in 0..per_init {
                let s = model.generate_sequence(r_init, d, steps, &mut rng)?;
                rows.extend(s.values.iter().enumerate().map(|(step, &v)| SeriesRow {
                    r_init,
                    series,
                    step,
                    t_seconds: step as f64 * d,
                    resistance_ohms: v,
                }));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgan::{TrainConfig, Trainer};
    use crate::normalization::NormStats;

    fn identity_model() -> GanModel {
        let stats = NormStats {
            mu_r: 12.0,
            sigma_r: 1.5,
            mu_dbar: 0.0,
            sigma_dbar: 0.02,
        };
        let t = Trainer::new(TrainConfig::default(), stats, "h".into()).unwrap();
        GanModel::new(t.generator, stats, "h")
    }

    fn row(r_init: f64, delay: f64, mean: f64, std: f64) -> MomentRow {
        MomentRow {
            r_init,
            delay,
            source: Source::Gan,
            mean_final: mean,
            std_final: std,
            n_samples: 100,
        }
    }

    #[test]
    fn identity_generator_is_perfectly_consistent() {
        let m = identity_model();
        let rep = delay_consistency(&m, &[1e4, 1e5], 500, &DEFAULT_CONDITIONS, 3, 1).unwrap();
        assert_eq!(rep.rows.len(), 10);
        for r in &rep.rows {
            assert!(r.mean_change.abs() < 1e-6 * r.r_init);
            assert_eq!(r.delay * r.steps, r.total_delay);
        }
        assert!(rep.rows.iter().any(|r| r.delay == 500 && r.steps == 1));
        assert!(rep.spread() < 1e-6);
    }

    #[test]
    fn indivisible_condition_is_rejected() {
        let m = identity_model();
        assert!(delay_consistency(&m, &[1e4], 500, &[7], 3, 1).is_err());
    }

    #[test]
    fn moment_match_closed_forms() {
        let a = MomentReport {
            rows: vec![row(1e4, 10.0, 2e4, 3e3), row(1e5, 10.0, 3e5, 1e4)],
        };
        let same = moment_match_score(&a, &a).unwrap();
        assert_eq!((same.mae_mu, same.mae_sigma), (0.0, 0.0));
        let doubled = MomentReport {
            rows: a.rows.iter().map(|r| MomentRow { mean_final: 2.0 * r.mean_final, ..*r }).collect(),
        };
        let s = moment_match_score(&doubled, &a).unwrap();
        assert!((s.mae_mu - std::f64::consts::LN_2).abs() < 1e-12);
        let shifted = MomentReport {
            rows: vec![row(1e4, 11.0, 2e4, 3e3), row(1e5, 10.0, 3e5, 1e4)],
        };
        assert!(moment_match_score(&shifted, &a).is_err());
    }

    #[test]
    fn oracle_zero_delay_keeps_initial_value() {
        let s = Sampler::oracle(DeviceParams::default());
        let grid = Grid {
            r_inits: vec![1e4, 2e5],
            delays: vec![1e-6],
        };
        let rep = conditioned_moments(&s, &grid, 50, 3).unwrap();
        for r in &rep.rows {
            let q = DeviceParams::default().state_for_resistance(r.r_init).unwrap().resistance(&DeviceParams::default());
            assert!((r.mean_final / q - 1.0).abs() < 1e-4);
            assert!(r.std_final / q < 1e-3);
        }
    }

    #[test]
    fn histogram_counts_sum_to_samples() {
        let groups = vec![(0.0, vec![1.0, 2.0, 3.0, 4.0]), (5.0, vec![4.0, 4.0, 2.5])];
        let rep = final_value_histogram(&groups, 3).unwrap();
        assert_eq!(rep.counts(0.0).iter().sum::<usize>(), 4);
        assert_eq!(rep.counts(5.0).iter().sum::<usize>(), 3);
        assert_eq!(rep.counts(5.0), vec![0, 1, 2]);
        assert!(final_value_histogram(&groups, 0).is_err());
    }

    #[test]
    fn series_lengths_follow_the_ceiling_rule() {
        assert_eq!(series_steps(1000.0), 2);
        assert_eq!(series_steps(1.0), 1001);
        assert_eq!(series_steps(300.0), 5);
        let m = identity_model();
        assert!(series_dump(&m, &[1e4], 100.0, 0, 1).unwrap().is_empty());
        let rows = series_dump(&m, &[1e4, 1e5], 500.0, 2, 1).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 4);
    }
}
