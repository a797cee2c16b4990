use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftforge"))
        .args(args)
        .env_remove("DRIFTFORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &str = r#"{
  "seed": 5,
  "train": {
    "batch": 4, "epochs": 1, "steps_per_epoch": 2, "q_max": 3, "d_max_d": 5,
    "arch": {"embed_hidden": [6], "gen_hidden": [8, 8], "disc_proc_hidden": [8], "disc_comb_hidden": [8]}
  },
  "quantizer": {"mc_trials": 4, "max_steps": 30},
  "eval": {"r_inits": [1e4, 1e5], "delays": [10, 100], "conditions": [5, 10], "total_delay": 20, "samples": 8}
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    dataset: PathBuf,
    stats: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.json");
    fs::write(&config, SMALL).unwrap();
    let data_dir = root.join("data");
    ok(&["gen-dataset", "--config", p(&config), "--count", "10", "--ttot", "100", "--out", p(&data_dir)]);
    let stats_dir = root.join("stats");
    ok(&["stats", "--dataset", p(&data_dir.join("dataset.csv")), "--out", p(&stats_dir)]);
    Fixture {
        _dir: dir,
        dataset: data_dir.join("dataset.csv"),
        stats: stats_dir.join("stats.json"),
        root,
        config,
    }
}

fn train(f: &Fixture, out: &str, extra: &[&str]) -> PathBuf {
    let dir = f.root.join(out);
    let mut args = vec![
        "train",
        "--config",
        p(&f.config),
        "--dataset",
        p(&f.dataset),
        "--stats",
        p(&f.stats),
        "--out",
        p(&dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

#[test]
fn small_dataset_has_expected_rows_and_is_reproducible() {
    let f = fixture();
    let text = fs::read_to_string(&f.dataset).unwrap();
    assert_eq!(text.lines().count(), 1 + 10 * 101);
    assert!(f.dataset.with_extension("meta.json").exists());
    let again = f.root.join("again");
    ok(&["gen-dataset", "--config", p(&f.config), "--count", "10", "--ttot", "100", "--out", p(&again)]);
    assert_eq!(fs::read(&f.dataset).unwrap(), fs::read(again.join("dataset.csv")).unwrap());
    let m = manifest(&again);
    assert_eq!(m["config"]["dataset"]["count"], 10);
    assert_eq!(m["config"]["dataset"]["seed"], 5);
}

#[test]
fn constant_dataset_stats_fail_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    let mut text = String::from("series_id,t_seconds,resistance_ohms\n");
    for id in 0..3 {
        for t in 0..4 {
            text.push_str(&format!("{id},{t},1000\n"));
        }
    }
    fs::write(&csv, text).unwrap();
    let out = run(&["stats", "--dataset", p(&csv), "--out", p(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_inputs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"dataset": {"count": "many"}}"#).unwrap();
    let out = run(&["gen-dataset", "--config", p(&bad), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["gen-dataset", "--count", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["gen-dataset", "--method", "euler", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_gives_initial_checkpoint_and_resume_continues() {
    let f = fixture();
    let init = train(&f, "init", &["--epochs", "0"]);
    let ckpt: Value = serde_json::from_str(&fs::read_to_string(init.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ckpt["step"], 0);
    assert_eq!(fs::read_to_string(init.join("train_log.csv")).unwrap().lines().count(), 1);

    let resumed = train(&f, "resumed", &["--resume", p(&init.join("checkpoint.json")), "--epochs", "2"]);
    let m = manifest(&resumed);
    assert_eq!(m["extra"]["start_step"], 0);
    assert_eq!(m["extra"]["end_step"], 4);
    let again = train(&f, "again", &["--resume", p(&resumed.join("checkpoint.json")), "--epochs", "3"]);
    assert_eq!(manifest(&again)["extra"]["end_step"], 6);
}

#[test]
fn ablation_is_recorded_and_training_is_deterministic() {
    let f = fixture();
    let a = train(&f, "a", &["--ablation-no-dd"]);
    let b = train(&f, "b", &["--ablation-no-dd"]);
    assert_eq!(manifest(&a)["extra"]["ablation_no_dd"], true);
    assert_eq!(manifest(&a)["config"]["delay_discrimination"], false);
    assert_eq!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(b.join("checkpoint.json")).unwrap()
    );
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert!(log.lines().nth(1).unwrap().ends_with(",,"));
    let full = train(&f, "full", &[]);
    assert_eq!(manifest(&full)["extra"]["ablation_no_dd"], false);
}

#[test]
fn single_threaded_training_matches_default_threads() {
    let f = fixture();
    let a = train(&f, "t1", &["--threads", "1"]);
    let b = train(&f, "tn", &[]);
    assert_eq!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(b.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn stats_from_another_dataset_are_refused() {
    let f = fixture();
    let other = f.root.join("other");
    ok(&["gen-dataset", "--count", "10", "--ttot", "100", "--seed", "99", "--out", p(&other)]);
    let out = run(&[
        "train",
        "--config",
        p(&f.config),
        "--dataset",
        p(&other.join("dataset.csv")),
        "--stats",
        p(&f.stats),
        "--out",
        p(&f.root.join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different dataset"));
}

#[test]
fn oracle_moments_run_without_a_checkpoint() {
    let f = fixture();
    let out = f.root.join("moments");
    ok(&["eval", "moments", "--config", p(&f.config), "--out", p(&out)]);
    let text = fs::read_to_string(out.join("moments_oracle.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "r_init,delay,source,mean_final,std_final,n_samples");
    assert_eq!(lines.count(), 4);
    assert!(!out.join("moments_gan.csv").exists());
}

#[test]
fn identity_generator_reports_zero_consistency_changes() {
    let f = fixture();
    let init = train(&f, "init", &["--epochs", "0"]);
    let ckpt = init.join("checkpoint.json");
    let out = f.root.join("cons");
    ok(&["eval", "consistency", "--config", p(&f.config), "--checkpoint", p(&ckpt), "--out", p(&out)]);
    let text = fs::read_to_string(out.join("consistency.csv")).unwrap();
    let mut rows = 0;
    let mut reader = text.lines();
    let header: Vec<&str> = reader.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mean_change").unwrap();
    for line in reader {
        let fields: Vec<&str> = line.split(',').collect();
        let r_init: f64 = fields[0].parse().unwrap();
        let v: f64 = fields[col].parse().unwrap();
        // only the log/exp round trip separates the output from the input
        assert!(v.abs() <= 1e-12 * r_init, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 4);
    assert!(manifest(&out)["extra"]["spread"].as_f64().unwrap() <= 1e-12 * 1e5);

    let both = f.root.join("both");
    ok(&["eval", "moments", "--config", p(&f.config), "--checkpoint", p(&ckpt), "--out", p(&both)]);
    assert!(both.join("moment_match.json").exists());
    let hist = f.root.join("hist");
    ok(&["eval", "histogram", "--config", p(&f.config), "--dataset", p(&f.dataset), "--out", p(&hist), "--bins", "7"]);
    assert_eq!(fs::read_to_string(hist.join("histogram.csv")).unwrap().lines().count(), 1 + 2 * 7);
    let series = f.root.join("series");
    ok(&[
        "eval", "series", "--config", p(&f.config), "--checkpoint", p(&ckpt), "--delay", "100", "--per-init", "2",
        "--out", p(&series),
    ]);
    // 2 inits x 2 series x (ceil(1100 / 100) + 1) points
    assert_eq!(fs::read_to_string(series.join("series.csv")).unwrap().lines().count(), 1 + 2 * 2 * 12);
}

#[test]
fn consistency_without_checkpoint_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval", "consistency", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_level_quantizer_has_zero_error_and_is_reproducible() {
    let f = fixture();
    let init = train(&f, "init", &["--epochs", "0"]);
    let ckpt = init.join("checkpoint.json");
    let q = |name: &str| {
        let out = f.root.join(name);
        ok(&[
            "quantize", "--config", p(&f.config), "--checkpoint", p(&ckpt), "--levels", "1", "--delay", "100",
            "--trials", "50", "--out", p(&out),
        ]);
        out
    };
    let a = q("qa");
    let b = q("qb");
    let errors = fs::read_to_string(a.join("errors.csv")).unwrap();
    for line in errors.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[3].parse::<f64>().unwrap(), 0.0, "{line}");
    }
    assert_eq!(fs::read(a.join("scheme.json")).unwrap(), fs::read(b.join("scheme.json")).unwrap());
}

#[test]
fn sweep_emits_one_row_per_experiment() {
    let f = fixture();
    let init = train(&f, "init", &["--epochs", "0"]);
    let out = f.root.join("sweep");
    ok(&[
        "quantize-sweep",
        "--config",
        p(&f.config),
        "--checkpoint",
        p(&init.join("checkpoint.json")),
        "--bits",
        "1..2",
        "--delays",
        "10,100",
        "--repeats",
        "2",
        "--trials",
        "20",
        "--out",
        p(&out),
    ]);
    let count = |name: &str| fs::read_to_string(out.join(name)).unwrap().lines().count() - 1;
    assert_eq!(count("sweep_experiments.csv"), 2 * 2 * 2);
    assert_eq!(count("sweep_gan.csv"), 4);
    assert_eq!(count("sweep_oracle.csv"), 4);
    let header = fs::read_to_string(out.join("sweep_gan.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "bits,levels,delay,error_mean,error_stderr,experiments");
}

#[test]
fn commands_leave_their_inputs_untouched() {
    let f = fixture();
    let before = |paths: &[&Path]| paths.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>();
    let init = train(&f, "init", &["--epochs", "0"]);
    let ckpt = init.join("checkpoint.json");
    let inputs = [f.config.as_path(), f.dataset.as_path(), f.stats.as_path(), ckpt.as_path()];
    let snapshot = before(&inputs);
    train(&f, "again", &["--resume", p(&ckpt), "--epochs", "1"]);
    ok(&["eval", "moments", "--config", p(&f.config), "--checkpoint", p(&ckpt), "--out", p(&f.root.join("m"))]);
    ok(&[
        "quantize", "--config", p(&f.config), "--checkpoint", p(&ckpt), "--levels", "2", "--delay", "10", "--trials",
        "10", "--out", p(&f.root.join("q")),
    ]);
    assert_eq!(snapshot, before(&inputs));
}
