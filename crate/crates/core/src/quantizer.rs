//! Multilevel storage quantizers designed through the generator.
//!
//! Levels and decoding boundaries live in the normalized log-resistance
//! domain. The loss penalizes generated samples that land within `rho` of
//! their bin edges, levels that leave their own bin, and extreme levels that
//! leave the allowed write range. Gradients reach the levels through the
//! generator's input gradient with the latent draws held fixed.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgan::GanModel;
use crate::error::{Error, Result};
use crate::evaluation::Sampler;
use crate::nn::Adam;
use crate::normalization::NormStats;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerConfig {
    pub rho: f64,
    pub lambda1: f64,
    /// Range-term weight; `None` uses half the number of levels.
    pub lambda2: Option<f64>,
    pub r_qmin: f64,
    pub r_qmax: f64,
    pub mc_trials: usize,
    pub lr: f64,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub max_steps: usize,
    /// Stop when the best loss improved by less than `convergence_tol` over this many steps.
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            rho: 0.05,
            lambda1: 10.0,
            lambda2: None,
            r_qmin: 1e4,
            r_qmax: 5e5,
            mc_trials: 32,
            lr: 1e-3,
            plateau_patience: 25,
            lr_decay: 0.9,
            max_steps: 10_000,
            convergence_window: 200,
            convergence_tol: 1e-8,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return fail("rho must be positive");
        }
        if !(self.r_qmin > 0.0 && self.r_qmin < self.r_qmax && self.r_qmax.is_finite()) {
            return fail("need 0 < r_qmin < r_qmax");
        }
        if self.mc_trials == 0 {
            return fail("mc_trials must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("need lr > 0 and 0 < lr_decay <= 1");
        }
        if self.lambda1 < 0.0 || self.lambda2.is_some_and(|l| l < 0.0) {
            return fail("loss weights must be non-negative");
        }
        Ok(())
    }

    pub fn lambda2_for(&self, num_levels: usize) -> f64 {
        self.lambda2.unwrap_or(num_levels as f64 / 2.0)
    }
}

/// Ordered levels with half-open decoding bins `[B[i], B[i+1])`, where
/// `B[0] = -inf`, `B[len] = +inf` and `boundaries` holds the interior ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationScheme {
    pub levels: Vec<f64>,
    pub boundaries: Vec<f64>,
    pub delay: f64,
}

impl QuantizationScheme {
    pub fn new(levels: Vec<f64>, boundaries: Vec<f64>, delay: f64) -> Result<Self> {
        let s = Self {
            levels,
            boundaries,
            delay,
        };
        s.validate()?;
        Ok(s)
    }

    /// Levels on a uniform grid inside the write range, boundaries at midpoints.
    pub fn initial(num_levels: usize, delay: f64, cfg: &QuantizerConfig, stats: &NormStats) -> Result<Self> {
        if num_levels == 0 {
            return Err(Error::invalid("need at least one level"));
        }
        let lo = stats.normalize_resistance(cfg.r_qmin)? + cfg.rho;
        let hi = stats.normalize_resistance(cfg.r_qmax)? - cfg.rho;
        let levels: Vec<f64> = if num_levels == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..num_levels)
                .map(|i| lo + (hi - lo) * i as f64 / (num_levels - 1) as f64)
                .collect()
        };
        let boundaries = levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self::new(levels, boundaries, delay)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Lower edge of bin `i`.
    pub fn lower(&self, i: usize) -> f64 {
        if i == 0 {
            f64::NEG_INFINITY
        } else {
            self.boundaries[i - 1]
        }
    }

    /// Upper edge of bin `i`.
    pub fn upper(&self, i: usize) -> f64 {
        self.boundaries.get(i).copied().unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels.len();
        if n == 0 || self.boundaries.len() + 1 != n {
            return Err(Error::invalid(format!(
                "{} levels need {} interior boundaries, got {}",
                n,
                n.saturating_sub(1),
                self.boundaries.len()
            )));
        }
        if self.levels.iter().chain(&self.boundaries).any(|x| !x.is_finite()) {
            return Err(Error::invalid("scheme has non-finite entries"));
        }
        for i in 0..n {
            if !(self.lower(i) < self.levels[i] && self.levels[i] < self.upper(i)) {
                return Err(Error::invalid(format!(
                    "level {i} ({}) lies outside its bin [{}, {})",
                    self.levels[i],
                    self.lower(i),
                    self.upper(i)
                )));
            }
        }
        Ok(())
    }

    /// Bin index of a normalized resistance.
    pub fn decode_normalized(&self, x: f64) -> usize {
        self.boundaries.partition_point(|b| *b <= x)
    }

    pub fn decode(&self, r: f64, stats: &NormStats) -> usize {
        self.decode_normalized(stats.norm_r(r))
    }

    pub fn levels_ohms(&self, stats: &NormStats) -> Vec<f64> {
        self.levels.iter().map(|&l| stats.denormalize_resistance(l)).collect()
    }

    pub fn boundaries_ohms(&self, stats: &NormStats) -> Vec<f64> {
        self.boundaries.iter().map(|&b| stats.denormalize_resistance(b)).collect()
    }

    fn params(&self) -> Vec<f64> {
        self.levels.iter().chain(&self.boundaries).copied().collect()
    }

    fn from_params(theta: &[f64], num_levels: usize, delay: f64) -> Self {
        Self {
            levels: theta[..num_levels].to_vec(),
            boundaries: theta[num_levels..].to_vec(),
            delay,
        }
    }
}

/// `min(x, 0)^2` and its derivative.
fn hinge(x: f64) -> (f64, f64) {
    let m = x.min(0.0);
    (m * m, 2.0 * m)
}

/// Loss value, its three parts and the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub crossover: f64,
    pub ordering: f64,
    pub range: f64,
    pub grad_levels: Vec<f64>,
    pub grad_boundaries: Vec<f64>,
}

/// Latent draws for every level: `mc_trials` vectors each.
pub fn draw_latents(model: &GanModel, num_levels: usize, trials: usize, rng: &mut Rng) -> Vec<Vec<Vec<f64>>> {
    (0..num_levels)
        .map(|_| (0..trials).map(|_| model.generator.draw_latent(rng)).collect())
        .collect()
}

/// Loss and gradient for fixed latent draws.
pub fn quantization_loss_with(
    sch: &QuantizationScheme,
    model: &GanModel,
    cfg: &QuantizerConfig,
    latents: &[Vec<Vec<f64>>],
) -> Result<LossEval> {
    let n = sch.num_levels();
    if latents.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: latents.len(),
        });
    }
    let (g, stats, rho) = (&model.generator, &model.stats, cfg.rho);

    // per level: (crossover, dL/dl_i, dL/dB[i], dL/dB[i+1])
    let parts = (0..n)
        .into_par_iter()
        .map(|i| -> Result<[f64; 4]> {
            let (lo, hi) = (sch.lower(i), sch.upper(i));
            let m = latents[i].len() as f64;
            let mut acc = [0.0; 4];
            for z in &latents[i] {
                let (x, trace) = g.sample_traced(sch.levels[i], sch.delay, z, stats)?;
                if !x.is_finite() {
                    return Err(Error::Numerical(format!("non-finite generator sample for level {i}")));
                }
                let mut d_x = 0.0;
                if lo.is_finite() {
                    let (v, dv) = hinge(x - lo - rho);
                    acc[0] += v / m;
                    d_x += dv / m;
                    acc[2] -= dv / m;
                }
                if hi.is_finite() {
                    let (v, dv) = hinge(hi - x - rho);
                    acc[0] += v / m;
                    d_x -= dv / m;
                    acc[3] += dv / m;
                }
                if d_x != 0.0 {
                    acc[1] += g.input_gradient(&trace, d_x, stats)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grad_levels = vec![0.0; n];
    let mut grad_boundaries = vec![0.0; n - 1];
    let mut crossover = 0.0;
    for (i, p) in parts.iter().enumerate() {
        crossover += p[0];
        grad_levels[i] += p[1];
        if i > 0 {
            grad_boundaries[i - 1] += p[2];
        }
        if i + 1 < n {
            grad_boundaries[i] += p[3];
        }
    }

    let mut ordering = 0.0;
    for i in 0..n {
        let l = sch.levels[i];
        if i > 0 {
            let (v, dv) = hinge(l - sch.boundaries[i - 1] - rho);
            ordering += v;
            grad_levels[i] += cfg.lambda1 * dv;
            grad_boundaries[i - 1] -= cfg.lambda1 * dv;
        }
        if i + 1 < n {
            let (v, dv) = hinge(sch.boundaries[i] - l - rho);
            ordering += v;
            grad_levels[i] -= cfg.lambda1 * dv;
            grad_boundaries[i] += cfg.lambda1 * dv;
        }
    }

    let lambda2 = cfg.lambda2_for(n);
    let qmin = stats.normalize_resistance(cfg.r_qmin)?;
    let qmax = stats.normalize_resistance(cfg.r_qmax)?;
    let (v_lo, dv_lo) = hinge(sch.levels[0] - qmin - rho);
    let (v_hi, dv_hi) = hinge(qmax - sch.levels[n - 1] - rho);
    grad_levels[0] += lambda2 * dv_lo;
    grad_levels[n - 1] -= lambda2 * dv_hi;
    let range = v_lo + v_hi;

    let loss = crossover + cfg.lambda1 * ordering + lambda2 * range;
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite quantization loss".into()));
    }
    Ok(LossEval {
        loss,
        crossover,
        ordering,
        range,
        grad_levels,
        grad_boundaries,
    })
}

/// Loss and gradient with fresh latent draws.
pub fn quantization_loss(
    sch: &QuantizationScheme,
    model: &GanModel,
    cfg: &QuantizerConfig,
    rng: &mut Rng,
) -> Result<LossEval> {
    let latents = draw_latents(model, sch.num_levels(), cfg.mc_trials, rng);
    quantization_loss_with(sch, model, cfg, &latents)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub best_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    /// Lowest-loss iterate.
    pub scheme: QuantizationScheme,
    pub best_loss: f64,
    pub trace: Vec<TraceRow>,
}

/// Adam on levels and boundaries with a plateau learning-rate schedule.
pub fn optimize(num_levels: usize, d: f64, model: &GanModel, cfg: &QuantizerConfig, seed: u64) -> Result<Optimized> {
    cfg.validate()?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("delay must be positive, got {d}")));
    }
    let init = QuantizationScheme::initial(num_levels, d, cfg, &model.stats)?;
    let mut theta = init.params();
    let mut adam = Adam::new(theta.len(), cfg.lr);
    let mut best = (f64::INFINITY, theta.clone());
    let mut best_history = Vec::with_capacity(cfg.max_steps.min(1 << 16));
    let mut trace = Vec::new();
    let mut bad_steps = 0;
    for step in 0..cfg.max_steps {
        let sch = QuantizationScheme::from_params(&theta, num_levels, d);
        let eval = quantization_loss(&sch, model, cfg, &mut rng::stream(seed, step as u64))?;
        // the ordering penalty is soft, so only admissible iterates may become the answer
        if eval.loss < best.0 && sch.validate().is_ok() {
            best = (eval.loss, theta.clone());
            bad_steps = 0;
        } else {
            bad_steps += 1;
            if bad_steps > cfg.plateau_patience {
                adam.lr *= cfg.lr_decay;
                bad_steps = 0;
            }
        }
        trace.push(TraceRow {
            step,
            loss: eval.loss,
            best_loss: best.0,
            lr: adam.lr,
        });
        best_history.push(best.0);
        if step >= cfg.convergence_window
            && best_history[step - cfg.convergence_window] - best.0 < cfg.convergence_tol
        {
            break;
        }
        let grad: Vec<f64> = eval.grad_levels.iter().chain(&eval.grad_boundaries).copied().collect();
        adam.step(&mut theta, &grad);
    }
    let scheme = QuantizationScheme::from_params(&best.1, num_levels, d);
    scheme
        .validate()
        .map_err(|e| Error::Numerical(format!("optimized scheme violates ordering: {e}")))?;
    Ok(Optimized {
        scheme,
        best_loss: best.0,
        trace,
    })
}

/// Monte Carlo decoding error averaged over levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub error: f64,
    pub stderr: f64,
    pub per_level: Vec<f64>,
    pub trials: usize,
}

/// Probability that a level written with `sch` decodes to another bin after `sch.delay`.
pub fn evaluate_error(
    sch: &QuantizationScheme,
    sampler: &Sampler,
    stats: &NormStats,
    trials: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let n = sch.num_levels();
    let per_level = if n == 1 {
        vec![0.0]
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, i as u64);
                let mut wrong = 0usize;
                for _ in 0..trials {
                    let bin = match sampler {
                        Sampler::Gan(m) => sch.decode_normalized(m.sample_normalized(sch.levels[i], sch.delay, &mut rng)?),
                        _ => {
                            let r0 = stats.denormalize_resistance(sch.levels[i]);
                            sch.decode(sampler.sample(r0, sch.delay, &mut rng)?, stats)
                        }
                    };
                    wrong += usize::from(bin != i);
                }
                Ok(wrong as f64 / trials as f64)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let var: f64 = per_level.iter().map(|p| p * (1.0 - p) / trials as f64).sum();
    Ok(ErrorEstimate {
        error: per_level.iter().sum::<f64>() / n as f64,
        stderr: var.sqrt() / n as f64,
        per_level,
        trials,
    })
}

pub const LEVEL_LADDER: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct LadderEntry {
    pub num_levels: usize,
    /// `None` when optimization did not yield a valid scheme.
    pub scheme: Option<QuantizationScheme>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxLevels {
    pub num_levels: usize,
    pub ladder: Vec<LadderEntry>,
}

/// Largest ladder size whose generator-evaluated error stays within `epsilon`.
pub fn max_levels(
    epsilon: f64,
    d: f64,
    model: &GanModel,
    cfg: &QuantizerConfig,
    trials: usize,
    seed: u64,
) -> Result<MaxLevels> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid("epsilon must lie in (0, 1]"));
    }
    let mut ladder = Vec::with_capacity(LEVEL_LADDER.len());
    let mut best = 1;
    for (k, &n) in LEVEL_LADDER.iter().enumerate() {
        let entry = match optimize(n, d, model, cfg, rng::child_seed(&mut rng::stream(seed, k as u64))) {
            Ok(opt) => {
                let err = evaluate_error(&opt.scheme, &Sampler::Gan(model), &model.stats, trials, seed)?;
                LadderEntry {
                    num_levels: n,
                    scheme: Some(opt.scheme),
                    error: err.error,
                }
            }
            Err(e) if e.is_numerical() => LadderEntry {
                num_levels: n,
                scheme: None,
                error: 1.0,
            },
            Err(e) => return Err(e),
        };
        if entry.error <= epsilon {
            best = best.max(n);
        }
        ladder.push(entry);
    }
    Ok(MaxLevels {
        num_levels: best,
        ladder,
    })
}

/// On-disk form of a scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub delay: f64,
    pub levels_ohms: Vec<f64>,
    pub boundaries_ohms: Vec<f64>,
    pub levels_normalized: Vec<f64>,
    pub boundaries_normalized: Vec<f64>,
    pub config: QuantizerConfig,
    pub checkpoint_hash: String,
}

impl SchemeFile {
    pub fn new(sch: &QuantizationScheme, stats: &NormStats, config: QuantizerConfig, checkpoint_hash: String) -> Self {
        Self {
            delay: sch.delay,
            levels_ohms: sch.levels_ohms(stats),
            boundaries_ohms: sch.boundaries_ohms(stats),
            levels_normalized: sch.levels.clone(),
            boundaries_normalized: sch.boundaries.clone(),
            config,
            checkpoint_hash,
        }
    }

    pub fn scheme(&self) -> Result<QuantizationScheme> {
        QuantizationScheme::new(self.levels_normalized.clone(), self.boundaries_normalized.clone(), self.delay)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: Self = serde_json::from_str(&text)?;
        f.scheme()?;
        Ok(f)
    }
}

/// One row of an error-versus-delay sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bits: u32,
    pub levels: usize,
    pub delay: f64,
    pub error_mean: f64,
    pub error_stderr: f64,
    pub experiments: usize,
}

/// One optimized scheme inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub bits: u32,
    pub levels: usize,
    pub delay: f64,
    pub repeat: usize,
    pub seed: u64,
    pub gan_error: f64,
    pub oracle_error: f64,
}

/// Errors of the optimized schemes, evaluated with the generator and with the simulator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sweep {
    pub gan: Vec<SweepRow>,
    pub oracle: Vec<SweepRow>,
    pub experiments: Vec<ExperimentRow>,
}

/// Optimize `repeats` schemes per (bits, delay) and average their errors.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    bits: &[u32],
    delays: &[f64],
    repeats: usize,
    model: &GanModel,
    oracle: &Sampler,
    cfg: &QuantizerConfig,
    trials: usize,
    seed: u64,
) -> Result<Sweep> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let mut out = Sweep::default();
    let mut run = 0u64;
    for &b in bits {
        let levels = 1usize << b;
        for &d in delays {
            let mut gan_errs = Vec::with_capacity(repeats);
            let mut oracle_errs = Vec::with_capacity(repeats);
            for repeat in 0..repeats {
                let s = rng::child_seed(&mut rng::stream(seed, run));
                run += 1;
                let opt = optimize(levels, d, model, cfg, s)?;
                let gan_error = evaluate_error(&opt.scheme, &Sampler::Gan(model), &model.stats, trials, s)?.error;
                let oracle_error = evaluate_error(&opt.scheme, oracle, &model.stats, trials, s)?.error;
                gan_errs.push(gan_error);
                oracle_errs.push(oracle_error);
                out.experiments.push(ExperimentRow {
                    bits: b,
                    levels,
                    delay: d,
                    repeat,
                    seed: s,
                    gan_error,
                    oracle_error,
                });
            }
            for (errs, rows) in [(&gan_errs, &mut out.gan), (&oracle_errs, &mut out.oracle)] {
                let (mean, std) = crate::evaluation::mean_std(errs);
                rows.push(SweepRow {
                    bits: b,
                    levels,
                    delay: d,
                    error_mean: mean,
                    error_stderr: std / (repeats as f64).sqrt(),
                    experiments: repeats,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgan::{TrainConfig, Trainer};
    use crate::simulator::{DeviceParams, SteppingMethod};

    fn stats() -> NormStats {
        NormStats {
            mu_r: 12.96,
            sigma_r: 0.5,
            mu_dbar: 0.0,
            sigma_dbar: 0.011,
        }
    }

    fn identity() -> GanModel {
        let t = Trainer::new(TrainConfig::default(), stats(), "h".into()).unwrap();
        GanModel::new(t.generator, stats(), "h")
    }

    fn scheme(levels: &[f64], boundaries: &[f64]) -> QuantizationScheme {
        QuantizationScheme::new(levels.to_vec(), boundaries.to_vec(), 100.0).unwrap()
    }

    #[test]
    fn decode_uses_half_open_bins() {
        let one = scheme(&[0.0], &[]);
        assert_eq!(one.decode_normalized(-1e9), 0);
        assert_eq!(one.decode_normalized(1e9), 0);
        let s = stats();
        let b = s.norm_r(2e5);
        let two = scheme(&[b - 1.0, b + 1.0], &[b]);
        assert_eq!(two.decode(1e5, &s), 0);
        assert_eq!(two.decode(3e5, &s), 1);
        assert_eq!(two.decode_normalized(b), 1);
    }

    #[test]
    fn identity_generator_mid_bin_levels_have_zero_loss() {
        let m = identity();
        let cfg = QuantizerConfig::default();
        let sch = QuantizationScheme::initial(4, 100.0, &cfg, &m.stats).unwrap();
        let eval = quantization_loss(&sch, &m, &cfg, &mut rng::from_seed(1)).unwrap();
        // the extreme levels sit exactly rho inside the range, up to rounding
        assert!(eval.loss < 1e-24, "{}", eval.loss);
        assert!(eval.grad_levels.iter().chain(&eval.grad_boundaries).all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn ordering_term_closed_form() {
        let m = identity();
        let cfg = QuantizerConfig {
            r_qmin: 1.0,
            r_qmax: 1e12,
            ..QuantizerConfig::default()
        };
        // level 1 sits 0.1 below its lower boundary
        let sch = QuantizationScheme {
            levels: vec![-2.0, -0.1],
            boundaries: vec![0.0],
            delay: 10.0,
        };
        let eval = quantization_loss(&sch, &m, &cfg, &mut rng::from_seed(2)).unwrap();
        let rho = cfg.rho;
        assert!((cfg.lambda1 * eval.ordering - cfg.lambda1 * (0.0 + rho + 0.1f64).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn single_level_only_activates_range_term() {
        let m = identity();
        let cfg = QuantizerConfig::default();
        let qmin = m.stats.norm_r(cfg.r_qmin);
        let sch = scheme(&[qmin - 0.5], &[]);
        let eval = quantization_loss(&sch, &m, &cfg, &mut rng::from_seed(3)).unwrap();
        assert_eq!(eval.crossover, 0.0);
        assert_eq!(eval.ordering, 0.0);
        assert!((eval.range - (0.5 + cfg.rho).powi(2)).abs() < 1e-12);
        assert!((eval.loss - 0.5 * eval.range).abs() < 1e-12);
    }

    #[test]
    fn initial_scheme_is_valid_and_inside_range() {
        let cfg = QuantizerConfig::default();
        for n in LEVEL_LADDER {
            let s = QuantizationScheme::initial(n, 10.0, &cfg, &stats()).unwrap();
            s.validate().unwrap();
            assert!(s.levels[0] >= stats().norm_r(cfg.r_qmin) + cfg.rho - 1e-12);
            for (i, l) in s.levels.iter().enumerate() {
                assert_eq!(s.decode_normalized(*l), i);
            }
        }
        assert!(QuantizationScheme::initial(0, 10.0, &cfg, &stats()).is_err());
    }

    #[test]
    fn invalid_schemes_are_rejected() {
        assert!(QuantizationScheme::new(vec![0.0, 1.0], vec![], 1.0).is_err());
        assert!(QuantizationScheme::new(vec![0.0, 1.0], vec![1.5], 1.0).is_err());
        assert!(QuantizationScheme::new(vec![1.0, 0.0], vec![0.5], 1.0).is_err());
    }

    #[test]
    fn frozen_oracle_never_errs() {
        let cfg = QuantizerConfig::default();
        let s = stats();
        let sch = QuantizationScheme::initial(4, 100.0, &cfg, &s).unwrap();
        let frozen = Sampler::Oracle {
            params: DeviceParams {
                attempt_freq: 0.0,
                ..DeviceParams::default()
            },
            method: SteppingMethod::TauLeap,
            max_dt: 1.0,
        };
        let e = evaluate_error(&sch, &frozen, &s, 200, 1).unwrap();
        assert_eq!(e.error, 0.0);
        let one = QuantizationScheme::initial(1, 1e5, &cfg, &s).unwrap();
        assert_eq!(evaluate_error(&one, &Sampler::oracle(DeviceParams::default()), &s, 10, 1).unwrap().error, 0.0);
    }

    #[test]
    fn identity_generator_optimization_stops_early() {
        let m = identity();
        let cfg = QuantizerConfig::default();
        let opt = optimize(2, 100.0, &m, &cfg, 4).unwrap();
        assert_eq!(opt.best_loss, 0.0);
        assert!(opt.trace.len() <= cfg.convergence_window + 1);
        let one = optimize(1, 100.0, &m, &cfg, 4).unwrap();
        assert_eq!(evaluate_error(&one.scheme, &Sampler::Gan(&m), &m.stats, 10, 1).unwrap().error, 0.0);
        let ml = max_levels(1.0, 100.0, &m, &cfg, 50, 1).unwrap();
        assert_eq!(ml.num_levels, 16);
    }

    #[test]
    fn drift_wider_than_a_bin_still_yields_an_ordered_scheme() {
        let mut m = identity();
        let cfg = QuantizerConfig {
            max_steps: 2000,
            lr: 1e-2,
            ..QuantizerConfig::default()
        };
        // every sample lands well over a bin above its level, so crossover fights the ordering penalty
        let width = {
            let init = QuantizationScheme::initial(4, 100.0, &cfg, &m.stats).unwrap();
            init.levels[1] - init.levels[0]
        };
        let bias = m.generator.combined.params_mut().last_mut().unwrap();
        *bias = 1.5 * width / m.stats.sigma_dbar;
        let opt = optimize(4, 100.0, &m, &cfg, 2).unwrap();
        opt.scheme.validate().unwrap();
        assert!(opt.best_loss > 0.0);
    }

    #[test]
    fn scheme_file_round_trips() {
        let s = stats();
        let sch = QuantizationScheme::initial(4, 100.0, &QuantizerConfig::default(), &s).unwrap();
        let f = SchemeFile::new(&sch, &s, QuantizerConfig::default(), "abc".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        f.write(&p).unwrap();
        assert_eq!(SchemeFile::read(&p).unwrap().scheme().unwrap(), sch);
    }
}
