use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer widths of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanArch {
    /// Delay and resistance processors; the last width is the embedding size.
    pub embed_hidden: Vec<usize>,
    /// Generator combined processor.
    pub gen_hidden: Vec<usize>,
    /// Discriminator condition and sequence processors.
    pub disc_proc_hidden: Vec<usize>,
    /// Discriminator combined processor.
    pub disc_comb_hidden: Vec<usize>,
}

impl Default for GanArch {
    fn default() -> Self {
        Self {
            embed_hidden: vec![64, 64],
            gen_hidden: vec![128, 128, 128],
            disc_proc_hidden: vec![128, 128],
            disc_comb_hidden: vec![128, 128],
        }
    }
}

/// GAN training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    /// Sequence length seen by the main discriminator.
    pub s_main: usize,
    /// Sequence length seen by the delay discriminator.
    pub s_dd: usize,
    pub q_max: usize,
    pub d_min_d: u32,
    pub d_max_d: u32,
    pub d_min_dd: f64,
    pub d_max_dd: f64,
    /// Sequences packed into one discriminator input.
    pub n_pack: usize,
    pub z_dim: usize,
    pub seed: u64,
    /// Train with the auxiliary delay discriminator; `false` is the ablation.
    pub delay_discrimination: bool,
    /// Start the generator at the residual identity (zeroed output layer).
    pub zero_init_head: bool,
    pub arch: GanArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 1000,
            steps_per_epoch: 500,
            batch: 64,
            s_main: 10,
            s_dd: 2,
            q_max: 20,
            d_min_d: 1,
            d_max_d: 90,
            d_min_dd: 1.0,
            d_max_dd: 500.0,
            n_pack: 2,
            z_dim: 20,
            seed: 0,
            delay_discrimination: true,
            zero_init_head: true,
            arch: GanArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if self.batch == 0 || self.n_pack == 0 || !self.batch.is_multiple_of(self.n_pack) {
            return fail("n_pack must divide a non-zero batch size");
        }
        if self.s_main < 2 {
            return fail("s_main must be at least 2");
        }
        if self.s_dd != 2 {
            return fail("the delay discriminator scores (initial, final) pairs, so s_dd must be 2");
        }
        if self.q_max < 2 {
            return fail("q_max must be at least 2");
        }
        if self.d_min_d < 1 || self.d_min_d > self.d_max_d {
            return fail("need 1 <= d_min_d <= d_max_d");
        }
        if !(self.d_min_dd > 0.0 && self.d_min_dd <= self.d_max_dd) {
            return fail("need 0 < d_min_dd <= d_max_dd");
        }
        if self.d_max_dd < self.d_max_d as f64 {
            return fail("d_max_dd must be at least d_max_d");
        }
        if self.z_dim == 0 {
            return fail("z_dim must be positive");
        }
        let widths = [
            &self.arch.embed_hidden,
            &self.arch.disc_proc_hidden,
        ];
        if widths.iter().any(|w| w.is_empty() || w.contains(&0)) {
            return fail("processor widths must be non-empty and positive");
        }
        if self.arch.gen_hidden.contains(&0) || self.arch.disc_comb_hidden.contains(&0) {
            return fail("hidden widths must be positive");
        }
        Ok(())
    }

    /// Packs per discriminator batch.
    pub fn packs(&self) -> usize {
        self.batch / self.n_pack
    }
}
