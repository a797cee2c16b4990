use rand::Rng as _;

use crate::dataset::DriftDataset;
use crate::error::{Error, Result};
use crate::normalization::{normalize_dataset, NormStats};
use crate::rng::Rng;

/// Normalized copy of a dataset as the trainer consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub series: Vec<Vec<f64>>,
    pub t_sample: f64,
    /// Smallest and largest raw resistance in the dataset.
    pub r_range: (f64, f64),
}

impl TrainingData {
    pub fn new(dataset: &DriftDataset, stats: &NormStats) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        Ok(Self {
            series: normalize_dataset(dataset, stats)?,
            t_sample: dataset.t_sample,
            r_range: dataset.resistance_range(),
        })
    }

    pub fn series_len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    /// Stride in samples for an integer delay in seconds.
    pub fn stride(&self, d: u32) -> Result<usize> {
        let stride = f64::from(d) / self.t_sample;
        if d == 0 || stride.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "delay {d} s is not a positive multiple of the {} s sampling interval",
                self.t_sample
            )));
        }
        Ok(stride as usize)
    }
}

/// Draw `count` windows of `s` normalized resistances spaced `d` seconds apart,
/// each from a uniformly chosen series and start index.
pub fn sample_real_subsequences(
    data: &TrainingData,
    d: u32,
    s: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    if s == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    let stride = data.stride(d)?;
    let span = stride * (s - 1);
    let len = data.series_len();
    if span >= len {
        return Err(Error::invalid(format!(
            "a window of {s} points at delay {d} s spans {} s, longer than the {} s series",
            span as f64 * data.t_sample,
            (len.saturating_sub(1)) as f64 * data.t_sample
        )));
    }
    Ok((0..count)
        .map(|_| {
            let series = &data.series[rng.random_range(0..data.series.len())];
            let start = rng.random_range(0..len - span);
            (0..s).map(|k| series[start + k * stride]).collect()
        })
        .collect())
}
