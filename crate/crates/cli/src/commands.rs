use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use driftforge::cgan::{write_log, GanModel, LogRow, Trainer, TrainingData};
use driftforge::dataset::{generate_dataset, meta_path, DatasetMeta, DriftDataset};
use driftforge::evaluation::{
    conditioned_moments, dataset_finals, delay_consistency, final_value_histogram, moment_match_score,
    sampler_finals, series_dump, write_rows, Grid, MomentReport, Sampler,
};
use driftforge::nn::Checkpoint;
use driftforge::normalization::{NormStats, StatsFile};
use driftforge::quantizer::{evaluate_error, optimize, sweep, SchemeFile};
use driftforge::simulator::SteppingMethod;
use serde::Serialize;

use crate::config::{EvalConfig, RunConfig};
use crate::manifest::Manifest;
use crate::{Common, EvalCommon, EvalKind, GenDatasetArgs, QuantizeArgs, SourceArg, StatsArgs, SweepArgs, TrainArgs};

fn prepare(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply_seed(common.seed);
    cfg.device.validate()?;
    out_dir(&common.out)?;
    Ok(cfg)
}

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn load_dataset(path: &Path) -> Result<DriftDataset> {
    let mp = meta_path(path);
    let meta = if mp.exists() { Some(DatasetMeta::read(&mp)?) } else { None };
    DriftDataset::read_csv(path, meta.as_ref()).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<GanModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(GanModel::from_checkpoint(&ckpt)?)
}

pub fn gen_dataset(a: GenDatasetArgs) -> Result<()> {
    let mut cfg = prepare(&a.common)?;
    if let Some(c) = a.count {
        cfg.dataset.count = c;
    }
    if let Some(t) = a.ttot {
        cfg.dataset.t_tot = t;
    }
    if let Some(t) = a.tsample {
        cfg.dataset.t_sample = t;
    }
    if let Some(m) = &a.method {
        cfg.dataset.method = m.parse::<SteppingMethod>()?;
    }
    let ds = generate_dataset(&cfg.dataset, &cfg.device)?;
    let csv = a.common.out.join("dataset.csv");
    ds.write_csv(&csv)?;
    let meta = DatasetMeta {
        r_min: Some(cfg.dataset.r_min),
        r_max: Some(cfg.dataset.r_max),
        method: Some(cfg.dataset.method),
        ..ds.meta(&cfg.device)
    };
    let mp = meta_path(&csv);
    meta.write(&mp)?;
    let mut m = Manifest::new("gen-dataset", &serde_json::json!({"device": cfg.device, "dataset": cfg.dataset}))?;
    m.output(&csv)?;
    m.output(&mp)?;
    m.note("rows", ds.len() * ds.series_len())?;
    m.write(&a.common.out)?;
    eprintln!("wrote {} series of {} samples to {}", ds.len(), ds.series_len(), csv.display());
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    out_dir(&a.out)?;
    let ds = load_dataset(&a.dataset)?;
    let stats = NormStats::from_dataset(&ds)?;
    let file = stats.with_hash(ds.content_hash());
    let path = a.out.join("stats.json");
    file.write(&path)?;
    let mut m = Manifest::new("stats", &serde_json::json!({"dataset": a.dataset}))?;
    m.input(&a.dataset)?;
    m.output(&path)?;
    m.note("stats_hash", file.stats_hash())?;
    m.write(&a.out)?;
    eprintln!(
        "mu_r={} sigma_r={} mu_dbar={} sigma_dbar={}",
        stats.mu_r, stats.sigma_r, stats.mu_dbar, stats.sigma_dbar
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = prepare(&a.common)?;
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.steps_per_epoch {
        t.steps_per_epoch = v;
    }
    if let Some(v) = a.batch {
        t.batch = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if a.ablation_no_dd {
        t.delay_discrimination = false;
    }
    let ds = load_dataset(&a.dataset)?;
    let sf = StatsFile::read(&a.stats)?;
    sf.check_dataset(&ds.content_hash())
        .context("stats were computed from a different dataset")?;
    let stats = sf.stats();
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            ckpt.check_stats_hash(&sf.stats_hash())
                .context("checkpoint was trained with different stats")?;
            let mut t = Trainer::from_checkpoint(&ckpt)?;
            if a.ablation_no_dd && t.delay_discriminator.is_some() {
                bail!("--ablation-no-dd conflicts with a checkpoint trained with the delay discriminator");
            }
            if let Some(v) = a.epochs {
                t.cfg.epochs = v;
            }
            t
        }
        None => Trainer::new(cfg.train.clone(), stats, sf.stats_hash())?,
    };
    let start = trainer.step;
    let data = TrainingData::new(&ds, &stats)?;
    let out = a.common.out.clone();
    let ckpt_path = out.join("checkpoint.json");
    let log_path = out.join("train_log.csv");
    let mut rows: Vec<LogRow> = Vec::new();
    let outcome = trainer.train(&data, |t, row| {
        eprintln!("{}", row.csv_line());
        rows.push(*row);
        write_log(&log_path, &rows)?;
        t.to_checkpoint().save(&ckpt_path)
    });
    if let Err(e) = outcome {
        // keep the partial log; the last completed epoch's checkpoint is already on disk
        write_log(&log_path, &rows)?;
        return Err(e.into());
    }
    trainer.to_checkpoint().save(&ckpt_path)?;
    write_log(&log_path, &rows)?;
    let mut m = Manifest::new("train", &trainer.cfg)?;
    m.input(&a.dataset)?;
    m.input(&a.stats)?;
    if let Some(p) = &a.resume {
        m.input(p)?;
    }
    m.output(&ckpt_path)?;
    m.output(&log_path)?;
    m.note("ablation_no_dd", !trainer.cfg.delay_discrimination)?;
    m.note("start_step", start)?;
    m.note("end_step", trainer.step)?;
    m.note("stats_hash", &trainer.stats_hash)?;
    m.write(&out)?;
    Ok(())
}

fn oracle(cfg: &RunConfig, eval: &EvalConfig) -> Sampler<'static> {
    let max_dt = eval.oracle_max_dt.unwrap_or(match eval.oracle_method {
        SteppingMethod::Exact => f64::INFINITY,
        _ => 1.0,
    });
    Sampler::Oracle {
        params: cfg.device,
        method: eval.oracle_method,
        max_dt,
    }
}

struct EvalSetup {
    cfg: RunConfig,
    eval: EvalConfig,
    model: Option<GanModel>,
    manifest: Manifest,
    out: PathBuf,
}

fn eval_setup(kind: &str, a: &EvalCommon) -> Result<EvalSetup> {
    let cfg = prepare(&a.common)?;
    let mut eval = match &a.grid {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading grid {}", p.display()))?;
            serde_json::from_str::<EvalConfig>(&text)
                .map_err(driftforge::Error::from)
                .with_context(|| format!("parsing grid {}", p.display()))?
        }
        None => cfg.eval.clone(),
    };
    if let Some(s) = a.common.seed.or(cfg.seed) {
        eval.seed = s;
    }
    if let Some(n) = a.samples {
        eval.samples = n;
    }
    if eval.r_inits.is_empty() || eval.r_inits.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        bail!("grid needs positive finite initial resistances");
    }
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let mut manifest = Manifest::new(kind, &serde_json::json!({"device": cfg.device, "eval": eval}))?;
    for p in [&a.checkpoint, &a.grid, &a.common.config].into_iter().flatten() {
        manifest.input(p)?;
    }
    Ok(EvalSetup {
        cfg,
        eval,
        model,
        manifest,
        out: a.common.out.clone(),
    })
}

fn need_model<'a>(s: &'a EvalSetup, what: &str) -> Result<&'a GanModel> {
    s.model
        .as_ref()
        .ok_or_else(|| anyhow!("{what} needs --checkpoint"))
}

pub fn eval(kind: EvalKind) -> Result<()> {
    match kind {
        EvalKind::Consistency(a) => {
            let mut s = eval_setup("eval consistency", &a)?;
            let model = need_model(&s, "consistency")?;
            let e = &s.eval;
            let report = delay_consistency(model, &e.r_inits, e.total_delay, &e.conditions, e.samples, e.seed)?;
            let path = s.out.join("consistency.csv");
            report.write_csv(&path)?;
            s.manifest.note("spread", report.spread())?;
            s.manifest.output(&path)?;
            s.manifest.write(&s.out)
        }
        EvalKind::Moments { args, source } => {
            let mut s = eval_setup("eval moments", &args)?;
            let source = source.unwrap_or(if s.model.is_some() { SourceArg::Both } else { SourceArg::Oracle });
            let grid = Grid {
                r_inits: s.eval.r_inits.clone(),
                delays: s.eval.delays.clone(),
            };
            let mut reports: Vec<(&str, MomentReport)> = Vec::new();
            if matches!(source, SourceArg::Gan | SourceArg::Both) {
                let model = need_model(&s, "moments from the generator")?;
                reports.push(("gan", conditioned_moments(&Sampler::Gan(model), &grid, s.eval.samples, s.eval.seed)?));
            }
            if matches!(source, SourceArg::Oracle | SourceArg::Both) {
                let o = oracle(&s.cfg, &s.eval);
                reports.push(("oracle", conditioned_moments(&o, &grid, s.eval.samples, s.eval.seed)?));
            }
            if source == SourceArg::Dataset {
                bail!("moments support gan, oracle or both");
            }
            for (name, r) in &reports {
                let path = s.out.join(format!("moments_{name}.csv"));
                r.write_csv(&path)?;
                s.manifest.output(&path)?;
            }
            if let [(_, g), (_, o)] = &reports[..] {
                let all = moment_match_score(g, o)?;
                let long = |r: &MomentReport| r.filtered(|row| row.delay > 90.0);
                let beyond = if long(g).rows.is_empty() { None } else { Some(moment_match_score(&long(g), &long(o))?) };
                let summary = serde_json::json!({"all_delays": all, "delays_above_90s": beyond});
                let path = s.out.join("moment_match.json");
                fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
                s.manifest.output(&path)?;
            }
            s.manifest.write(&s.out)
        }
        EvalKind::Histogram {
            args,
            source,
            dataset,
            bins,
        } => {
            let mut s = eval_setup("eval histogram", &args)?;
            if let Some(b) = bins {
                s.eval.bins = b;
            }
            let source = source.unwrap_or(if dataset.is_some() {
                SourceArg::Dataset
            } else if s.model.is_some() {
                SourceArg::Gan
            } else {
                SourceArg::Oracle
            });
            let e = &s.eval;
            let groups = match source {
                SourceArg::Dataset => {
                    let p = dataset
                        .as_ref()
                        .ok_or_else(|| anyhow!("--source dataset needs --dataset"))?;
                    s.manifest.input(p)?;
                    dataset_finals(&load_dataset(p)?, &e.delays)?
                }
                SourceArg::Gan => {
                    let model = need_model(&s, "histogram from the generator")?;
                    sampler_finals(&Sampler::Gan(model), &e.r_inits, &e.delays, e.samples, e.seed)?
                }
                SourceArg::Oracle => sampler_finals(&oracle(&s.cfg, e), &e.r_inits, &e.delays, e.samples, e.seed)?,
                SourceArg::Both => bail!("histogram takes a single source"),
            };
            let report = final_value_histogram(&groups, e.bins)?;
            let path = s.out.join("histogram.csv");
            let summary = s.out.join("histogram_summary.csv");
            report.write_csv(&path, &summary)?;
            s.manifest.note("source", format!("{source:?}").to_lowercase())?;
            s.manifest.output(&path)?;
            s.manifest.output(&summary)?;
            s.manifest.write(&s.out)
        }
        EvalKind::Series { args, delay, per_init } => {
            let mut s = eval_setup("eval series", &args)?;
            if let Some(d) = delay {
                s.eval.series_delay = d;
            }
            if let Some(n) = per_init {
                s.eval.series_per_init = n;
            }
            let model = need_model(&s, "series")?;
            let e = &s.eval;
            let rows = series_dump(model, &e.r_inits, e.series_delay, e.series_per_init, e.seed)?;
            let path = s.out.join("series.csv");
            write_rows(&path, &rows)?;
            s.manifest.output(&path)?;
            s.manifest.write(&s.out)
        }
    }
}

#[derive(Serialize)]
struct ErrorRow {
    source: &'static str,
    levels: usize,
    delay: f64,
    error: f64,
    stderr: f64,
    trials: usize,
}

pub fn quantize(a: QuantizeArgs) -> Result<()> {
    let cfg = prepare(&a.common)?;
    cfg.quantizer.validate()?;
    let model = load_model(&a.checkpoint)?;
    let seed = cfg.quantizer_seed();
    let opt = optimize(a.levels, a.delay, &model, &cfg.quantizer, seed)?;
    let ckpt_hash = crate::manifest::file_hash(&a.checkpoint)?;
    let out = &a.common.out;
    let scheme_path = out.join("scheme.json");
    SchemeFile::new(&opt.scheme, &model.stats, cfg.quantizer.clone(), ckpt_hash).write(&scheme_path)?;
    let trace_path = out.join("quantize_trace.csv");
    write_rows(&trace_path, &opt.trace)?;
    let mut errors = Vec::new();
    for (source, sampler) in [("gan", Sampler::Gan(&model)), ("oracle", oracle(&cfg, &cfg.eval))] {
        let e = evaluate_error(&opt.scheme, &sampler, &model.stats, a.trials, seed)?;
        errors.push(ErrorRow {
            source,
            levels: a.levels,
            delay: a.delay,
            error: e.error,
            stderr: e.stderr,
            trials: a.trials,
        });
    }
    let err_path = out.join("errors.csv");
    write_rows(&err_path, &errors)?;
    let mut m = Manifest::new(
        "quantize",
        &serde_json::json!({
            "quantizer": cfg.quantizer, "device": cfg.device, "levels": a.levels, "delay": a.delay,
            "trials": a.trials, "seed": seed, "oracle_method": cfg.eval.oracle_method,
        }),
    )?;
    m.input(&a.checkpoint)?;
    for p in [&scheme_path, &trace_path, &err_path] {
        m.output(p)?;
    }
    m.note("best_loss", opt.best_loss)?;
    m.note("steps", opt.trace.len())?;
    m.write(out)?;
    for r in &errors {
        eprintln!("{} error {:.4} +- {:.4}", r.source, r.error, r.stderr);
    }
    Ok(())
}

/// `1..4` (inclusive) or a comma list.
pub fn parse_bits(text: &str) -> Result<Vec<u32>> {
    let bad = || anyhow!("bad --bits '{text}'");
    let bits: Vec<u32> = match text.split_once("..") {
        Some((lo, hi)) => {
            let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u32 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            (lo..=hi).collect()
        }
        None => text
            .split(',')
            .map(|b| b.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?,
    };
    if bits.is_empty() || bits.iter().any(|&b| b == 0 || b > 16) {
        return Err(bad());
    }
    Ok(bits)
}

pub fn quantize_sweep(a: SweepArgs) -> Result<()> {
    let cfg = prepare(&a.common)?;
    cfg.quantizer.validate()?;
    let bits = parse_bits(&a.bits)?;
    let model = load_model(&a.checkpoint)?;
    let seed = cfg.quantizer_seed();
    let o = oracle(&cfg, &cfg.eval);
    let result = sweep(&bits, &a.delays, a.repeats, &model, &o, &cfg.quantizer, a.trials, seed)?;
    let out = &a.common.out;
    let mut m = Manifest::new(
        "quantize-sweep",
        &serde_json::json!({
            "quantizer": cfg.quantizer, "device": cfg.device, "bits": bits, "delays": a.delays,
            "repeats": a.repeats, "trials": a.trials, "seed": seed, "oracle_method": cfg.eval.oracle_method,
        }),
    )?;
    m.input(&a.checkpoint)?;
    let gan = out.join("sweep_gan.csv");
    let orc = out.join("sweep_oracle.csv");
    let exp = out.join("sweep_experiments.csv");
    write_rows(&gan, &result.gan)?;
    write_rows(&orc, &result.oracle)?;
    write_rows(&exp, &result.experiments)?;
    for p in [&gan, &orc, &exp] {
        m.output(p)?;
    }
    m.write(out)
}
