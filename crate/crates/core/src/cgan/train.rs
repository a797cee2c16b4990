use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{sample_real_subsequences, TrainingData};
use super::discriminator::Discriminator;
use super::generator::{GenTrace, Generator, Rollout};
use crate::error::{Error, Result};
use crate::nn::{bce_logit, bce_logit_grad, Checkpoint, Grads, Module, ModuleOptimizer, NetRecord};
use crate::normalization::NormStats;
use crate::rng::{self, Rng};

/// Items handled per parallel work unit. Fixed so the reduction order does
/// not depend on the thread count.
const CHUNK: usize = 4;

pub const LOG_HEADER: &str = "epoch,step,loss_D,loss_G_main,loss_Ddd,loss_G_dd";

/// Losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub loss_d: f64,
    pub loss_g_main: f64,
    pub loss_ddd: Option<f64>,
    pub loss_g_dd: Option<f64>,
}

impl StepLosses {
    fn is_finite(&self) -> bool {
        self.loss_d.is_finite()
            && self.loss_g_main.is_finite()
            && self.loss_ddd.is_none_or(f64::is_finite)
            && self.loss_g_dd.is_none_or(f64::is_finite)
    }
}

/// Epoch-averaged losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    /// Global step count at the end of the epoch.
    pub step: u64,
    pub losses: StepLosses,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        format!(
            "{},{},{:.9e},{:.9e},{},{}",
            self.epoch,
            self.step,
            self.losses.loss_d,
            self.losses.loss_g_main,
            opt(self.losses.loss_ddd),
            opt(self.losses.loss_g_dd)
        )
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{LOG_HEADER}").expect("in-memory write");
    for r in rows {
        writeln!(out, "{}", r.csv_line()).expect("in-memory write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Result of an adversarial phase: discriminator loss, generator loss and
/// the generator gradient it contributes.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub loss_disc: f64,
    pub loss_gen: f64,
    pub gen_grads: Grads,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerState {
    generator: ModuleOptimizer,
    discriminator: ModuleOptimizer,
    delay_discriminator: Option<ModuleOptimizer>,
}

/// Generator, both discriminators and their optimizer states.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub stats: NormStats,
    pub stats_hash: String,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub delay_discriminator: Option<Discriminator>,
    opt_g: ModuleOptimizer,
    opt_d: ModuleOptimizer,
    opt_dd: Option<ModuleOptimizer>,
    pub step: u64,
}

/// Sum per-item losses and gradients over `n` items in fixed chunks.
fn reduce<M, F>(template: &M, n: usize, f: F) -> Result<(f64, Grads)>
where
    M: Module + Sync,
    F: Fn(usize, &mut Grads) -> Result<f64> + Sync,
{
    let parts = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut grads = Grads::zeros_like(template);
            let mut loss = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                loss += f(i, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Grads::zeros_like(template);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    Ok((loss, total))
}

fn guard(what: &str, step: u64, grads: &Grads) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numerical(format!("non-finite {what} gradient at step {step}")));
    }
    Ok(())
}

impl Trainer {
    pub fn new(cfg: TrainConfig, stats: NormStats, stats_hash: String) -> Result<Self> {
        cfg.validate()?;
        stats.validate()?;
        let mut r = rng::stream(cfg.seed, 0);
        let generator = Generator::new(&cfg.arch, cfg.z_dim, cfg.zero_init_head, &mut r)?;
        let discriminator = Discriminator::new(&cfg.arch, cfg.n_pack, cfg.s_main, &mut r)?;
        let delay_discriminator = if cfg.delay_discrimination {
            Some(Discriminator::new(&cfg.arch, cfg.n_pack, cfg.s_dd, &mut r)?)
        } else {
            None
        };
        let opt_g = ModuleOptimizer::new(&generator, cfg.lr);
        let opt_d = ModuleOptimizer::new(&discriminator, cfg.lr);
        let opt_dd = delay_discriminator.as_ref().map(|d| ModuleOptimizer::new(d, cfg.lr));
        Ok(Self {
            cfg,
            stats,
            stats_hash,
            generator,
            discriminator,
            delay_discriminator,
            opt_g,
            opt_d,
            opt_dd,
            step: 0,
        })
    }

    /// Random stream for a global step; stream 0 is reserved for initialization.
    pub fn step_rng(&self, step: u64) -> Rng {
        rng::stream(self.cfg.seed, step + 1)
    }

    /// Main adversarial phase: updates the discriminator and returns the
    /// generator gradient of the non-saturating loss against the updated one.
    pub fn train_main_step(&mut self, data: &TrainingData, rng: &mut Rng) -> Result<PhaseOutcome> {
        let cfg = &self.cfg;
        let (b, n, s) = (cfg.batch, cfg.n_pack, cfg.s_main);
        let packs = cfg.packs();
        let d_int = rng.random_range(cfg.d_min_d..=cfg.d_max_d);
        let d = f64::from(d_int);
        let real = sample_real_subsequences(data, d_int, s, b, rng)?;
        let latents: Vec<Vec<Vec<f64>>> = (0..b)
            .map(|_| (1..s).map(|_| self.generator.draw_latent(rng)).collect())
            .collect();

        let (g, stats) = (&self.generator, &self.stats);
        let rollouts = real
            .par_iter()
            .zip(&latents)
            .map(|(seq, zs)| Rollout::run(g, seq[0], d, zs, stats))
            .collect::<Result<Vec<_>>>()?;
        let delays = vec![d; n];
        let real_pack = |k: usize| {
            let seqs: Vec<&[f64]> = real[k * n..(k + 1) * n].iter().map(Vec::as_slice).collect();
            self.discriminator.pack(&seqs, &delays, stats)
        };
        let fake_seqs = |k: usize| -> Vec<&[f64]> {
            rollouts[k * n..(k + 1) * n].iter().map(|r| r.rbar.as_slice()).collect()
        };

        let scale = 1.0 / packs as f64;
        let disc = &self.discriminator;
        let (loss_disc, mut d_grads) = reduce(disc, packs, |k, grads| {
            let (_, t_real) = disc.score_traced(&real_pack(k)?)?;
            disc.backward(&t_real, bce_logit_grad(1.0, t_real.logit()), grads)?;
            let (_, t_fake) = disc.score_traced(&disc.pack(&fake_seqs(k), &delays, stats)?)?;
            disc.backward(&t_fake, bce_logit_grad(0.0, t_fake.logit()), grads)?;
            Ok(bce_logit(1.0, t_real.logit()) + bce_logit(0.0, t_fake.logit()))
        })?;
        d_grads.scale(scale);
        guard("discriminator", self.step, &d_grads)?;
        self.opt_d.step(&mut self.discriminator, &d_grads);

        let disc = &self.discriminator;
        let (loss_gen, mut gen_grads) = reduce(g, packs, |k, grads| {
            let seqs = fake_seqs(k);
            let (_, trace) = disc.score_traced(&disc.pack(&seqs, &delays, stats)?)?;
            let upstream = disc.input_gradient(&trace, bce_logit_grad(1.0, trace.logit()))?;
            for (j, grad_rbar) in disc.unpack_gradient(&upstream, stats).iter().enumerate() {
                rollouts[k * n + j].backward(g, grad_rbar, stats, grads)?;
            }
            Ok(bce_logit(1.0, trace.logit()))
        })?;
        gen_grads.scale(scale);
        Ok(PhaseOutcome {
            loss_disc: loss_disc * scale,
            loss_gen: loss_gen * scale,
            gen_grads,
        })
    }

    /// Delay-discrimination phase: updates the delay discriminator on
    /// (single-shot → 0, recurrent → 1) and returns the generator gradient
    /// for making single-shot outputs look recurrent.
    pub fn train_delay_discriminator_step(&mut self, data: &TrainingData, rng: &mut Rng) -> Result<PhaseOutcome> {
        let Some(dd) = self.delay_discriminator.as_ref() else {
            return Err(Error::invalid("delay discrimination is disabled"));
        };
        let cfg = &self.cfg;
        let (b, n) = (cfg.batch, cfg.n_pack);
        let packs = cfg.packs();
        let q = rng.random_range(2..=cfg.q_max);
        let (r_lo, r_hi) = data.r_range;
        let g = &self.generator;
        let stats = &self.stats;

        struct Item {
            d: f64,
            rbar_init: f64,
            z_single: Vec<f64>,
            z_rec: Vec<Vec<f64>>,
        }
        let items: Vec<Item> = (0..b)
            .map(|_| {
                let d = rng.random_range(cfg.d_min_dd..=cfg.d_max_dd);
                let r_init = if r_hi > r_lo { rng.random_range(r_lo..=r_hi) } else { r_lo };
                Item {
                    d,
                    rbar_init: stats.norm_r(r_init),
                    z_single: g.draw_latent(rng),
                    z_rec: (0..q).map(|_| g.draw_latent(rng)).collect(),
                }
            })
            .collect();

        let outputs = items
            .par_iter()
            .map(|it| -> Result<(f64, GenTrace, f64)> {
                let (single, trace) = g.sample_traced(it.rbar_init, it.d, &it.z_single, stats)?;
                let mut x = it.rbar_init;
                for z in &it.z_rec {
                    x = g.sample(x, it.d / q as f64, z, stats)?;
                }
                Ok((single, trace, x))
            })
            .collect::<Result<Vec<_>>>()?;

        let pair = |i: usize, recurrent: bool| {
            let fin = if recurrent { outputs[i].2 } else { outputs[i].0 };
            [items[i].rbar_init, fin]
        };
        let pack = |dd: &Discriminator, k: usize, recurrent: bool| {
            let pairs: Vec<[f64; 2]> = (k * n..(k + 1) * n).map(|i| pair(i, recurrent)).collect();
            let seqs: Vec<&[f64]> = pairs.iter().map(|p| p.as_slice()).collect();
            let delays: Vec<f64> = (k * n..(k + 1) * n).map(|i| items[i].d).collect();
            dd.pack(&seqs, &delays, stats)
        };

        let scale = 1.0 / packs as f64;
        let (loss_disc, mut dd_grads) = reduce(dd, packs, |k, grads| {
            let (_, t_single) = dd.score_traced(&pack(dd, k, false)?)?;
            dd.backward(&t_single, bce_logit_grad(0.0, t_single.logit()), grads)?;
            let (_, t_rec) = dd.score_traced(&pack(dd, k, true)?)?;
            dd.backward(&t_rec, bce_logit_grad(1.0, t_rec.logit()), grads)?;
            Ok(bce_logit(0.0, t_single.logit()) + bce_logit(1.0, t_rec.logit()))
        })?;
        dd_grads.scale(scale);
        guard("delay discriminator", self.step, &dd_grads)?;
        let dd_mut = self.delay_discriminator.as_mut().expect("checked above");
        self.opt_dd.as_mut().expect("paired with network").step(dd_mut, &dd_grads);

        let dd = self.delay_discriminator.as_ref().expect("checked above");
        let g = &self.generator;
        let (loss_gen, mut gen_grads) = reduce(g, packs, |k, grads| {
            let (_, trace) = dd.score_traced(&pack(dd, k, false)?)?;
            let upstream = dd.input_gradient(&trace, bce_logit_grad(1.0, trace.logit()))?;
            for (j, grad_pair) in dd.unpack_gradient(&upstream, stats).iter().enumerate() {
                g.backward(&outputs[k * n + j].1, grad_pair[1], stats, grads)?;
            }
            Ok(bce_logit(1.0, trace.logit()))
        })?;
        gen_grads.scale(scale);
        Ok(PhaseOutcome {
            loss_disc: loss_disc * scale,
            loss_gen: loss_gen * scale,
            gen_grads,
        })
    }

    /// One full step: discriminator, delay discriminator, then generator.
    pub fn train_step(&mut self, data: &TrainingData) -> Result<StepLosses> {
        let mut rng = self.step_rng(self.step);
        let main = self.train_main_step(data, &mut rng)?;
        let mut grads = main.gen_grads;
        let mut losses = StepLosses {
            loss_d: main.loss_disc,
            loss_g_main: main.loss_gen,
            loss_ddd: None,
            loss_g_dd: None,
        };
        if self.delay_discriminator.is_some() {
            let dd = self.train_delay_discriminator_step(data, &mut rng)?;
            grads.add_assign(&dd.gen_grads);
            losses.loss_ddd = Some(dd.loss_disc);
            losses.loss_g_dd = Some(dd.loss_gen);
        }
        if !losses.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {}: {losses:?}", self.step)));
        }
        guard("generator", self.step, &grads)?;
        self.opt_g.step(&mut self.generator, &grads);
        self.step += 1;
        Ok(losses)
    }

    pub fn total_steps(&self) -> u64 {
        (self.cfg.epochs * self.cfg.steps_per_epoch) as u64
    }

    /// Train until `epochs * steps_per_epoch` global steps, calling
    /// `on_epoch` after every completed epoch.
    pub fn train(
        &mut self,
        data: &TrainingData,
        mut on_epoch: impl FnMut(&Trainer, &LogRow) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        let spe = self.cfg.steps_per_epoch.max(1) as u64;
        let mut log = Vec::new();
        let mut sum = [0.0; 4];
        let mut count = 0usize;
        while self.step < self.total_steps() {
            let l = self.train_step(data)?;
            sum[0] += l.loss_d;
            sum[1] += l.loss_g_main;
            sum[2] += l.loss_ddd.unwrap_or(0.0);
            sum[3] += l.loss_g_dd.unwrap_or(0.0);
            count += 1;
            if self.step.is_multiple_of(spe) {
                let c = count as f64;
                let has_dd = self.delay_discriminator.is_some();
                let row = LogRow {
                    epoch: (self.step / spe) as usize,
                    step: self.step,
                    losses: StepLosses {
                        loss_d: sum[0] / c,
                        loss_g_main: sum[1] / c,
                        loss_ddd: has_dd.then(|| sum[2] / c),
                        loss_g_dd: has_dd.then(|| sum[3] / c),
                    },
                };
                on_epoch(self, &row)?;
                log.push(row);
                sum = [0.0; 4];
                count = 0;
            }
        }
        Ok(log)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut networks = module_records("generator", &self.generator, &["delay", "resistance", "combined"]);
        let disc_parts = ["condition", "sequence", "combined"];
        networks.extend(module_records("discriminator", &self.discriminator, &disc_parts));
        if let Some(dd) = &self.delay_discriminator {
            networks.extend(module_records("delay_discriminator", dd, &disc_parts));
        }
        let mut ckpt = Checkpoint::new(
            networks,
            serde_json::to_value(&self.cfg).expect("config serializes"),
            self.stats_hash.clone(),
            Some(self.stats),
            self.step,
        );
        let opt = OptimizerState {
            generator: self.opt_g.clone(),
            discriminator: self.opt_d.clone(),
            delay_discriminator: self.opt_dd.clone(),
        };
        ckpt.optimizer = Some(serde_json::to_value(opt).expect("optimizer serializes"));
        ckpt
    }

    /// Rebuild a trainer, including optimizer state, from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Checkpoint(format!("bad training config: {e}")))?;
        let stats = ckpt
            .stats
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no normalization stats".into()))?;
        let mut t = Trainer::new(cfg, stats, ckpt.stats_hash.clone())?;
        load_module(ckpt, "generator", &mut t.generator, &["delay", "resistance", "combined"])?;
        let disc_parts = ["condition", "sequence", "combined"];
        load_module(ckpt, "discriminator", &mut t.discriminator, &disc_parts)?;
        if let Some(dd) = t.delay_discriminator.as_mut() {
            load_module(ckpt, "delay_discriminator", dd, &disc_parts)?;
        }
        if let Some(v) = &ckpt.optimizer {
            let opt: OptimizerState = serde_json::from_value(v.clone())
                .map_err(|e| Error::Checkpoint(format!("bad optimizer state: {e}")))?;
            t.opt_g = opt.generator;
            t.opt_d = opt.discriminator;
            t.opt_dd = opt.delay_discriminator;
            if t.opt_dd.is_some() != t.delay_discriminator.is_some() {
                return Err(Error::Checkpoint("delay discriminator state does not match config".into()));
            }
        }
        t.step = ckpt.step;
        Ok(t)
    }
}

fn module_records(prefix: &str, m: &impl Module, parts: &[&str]) -> Vec<NetRecord> {
    m.nets()
        .into_iter()
        .zip(parts)
        .map(|(net, part)| NetRecord::from_net(&format!("{prefix}.{part}"), net))
        .collect()
}

pub(crate) fn load_module(ckpt: &Checkpoint, prefix: &str, m: &mut impl Module, parts: &[&str]) -> Result<()> {
    for (net, part) in m.nets_mut().into_iter().zip(parts) {
        let stored = ckpt.network(&format!("{prefix}.{part}"))?;
        if stored.layers() != net.layers() {
            return Err(Error::Checkpoint(format!(
                "network '{prefix}.{part}' does not match the configured architecture"
            )));
        }
        *net = stored;
    }
    Ok(())
}
