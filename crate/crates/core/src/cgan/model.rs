use super::config::TrainConfig;
use super::generator::Generator;
use super::train::load_module;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::normalization::NormStats;
use crate::rng::Rng;
use crate::simulator::DriftSeries;

/// A trained generator with the statistics it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: Generator,
    pub stats: NormStats,
    pub stats_hash: String,
}

impl GanModel {
    pub fn new(generator: Generator, stats: NormStats, stats_hash: impl Into<String>) -> Self {
        Self {
            generator,
            stats,
            stats_hash: stats_hash.into(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Checkpoint(format!("bad training config: {e}")))?;
        let stats = ckpt
            .stats
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no normalization stats".into()))?;
        stats.validate()?;
        let mut generator = Generator::zeros(&cfg.arch, cfg.z_dim)?;
        load_module(ckpt, "generator", &mut generator, &["delay", "resistance", "combined"])?;
        Ok(Self::new(generator, stats, ckpt.stats_hash.clone()))
    }

    /// Normalized resistance after `delay` seconds.
    pub fn sample_normalized(&self, rbar_init: f64, delay: f64, rng: &mut Rng) -> Result<f64> {
        let z = self.generator.draw_latent(rng);
        self.generator.sample(rbar_init, delay, &z, &self.stats)
    }

    /// Resistance in ohms after `delay` seconds, one latent draw.
    pub fn sample_ohms(&self, r_init: f64, delay: f64, rng: &mut Rng) -> Result<f64> {
        let rbar = self.stats.normalize_resistance(r_init)?;
        Ok(self.stats.denormalize_resistance(self.sample_normalized(rbar, delay, rng)?))
    }

    /// Closed-loop rollout of `steps` calls at spacing `delay`.
    pub fn generate_sequence(&self, r_init: f64, delay: f64, steps: usize, rng: &mut Rng) -> Result<DriftSeries> {
        if steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(Error::invalid(format!("delay must be positive, got {delay}")));
        }
        let mut rbar = self.stats.normalize_resistance(r_init)?;
        let mut values = Vec::with_capacity(steps + 1);
        values.push(r_init);
        for _ in 0..steps {
            rbar = self.sample_normalized(rbar, delay, rng)?;
            values.push(self.stats.denormalize_resistance(rbar));
        }
        Ok(DriftSeries {
            r_init,
            t_sample: delay,
            values,
        })
    }
}
