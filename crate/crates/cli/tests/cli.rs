use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fmgspo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmgspo")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fmgspo(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = fmgspo(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn sorted_files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

/// Small synthetic recordings preprocessed with a coarse stride.
struct Fixture {
    tmp: TempDir,
    data: PathBuf,
}

fn fixture(synth_extra: &str) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "synth.toml", &format!("recordings_per_class = 2\nduration_s = 2.0\n{synth_extra}"));
    let raw = tmp.path().join("raw");
    ok(&["synth", "--config", p(&cfg), "--out", p(&raw)]);
    let pipe = write(tmp.path(), "pipe.toml", "stride_ms = 40.0\n");
    let data = tmp.path().join("data");
    ok(&["preprocess", "--input", p(&raw), "--config", p(&pipe), "--out", p(&data)]);
    Fixture { tmp, data }
}

fn manifest(dir: &Path) -> toml::Table {
    toml::from_str(&fs::read_to_string(dir.join("manifest.toml")).unwrap()).unwrap()
}

fn metric(dir: &Path, name: &str) -> f64 {
    manifest(dir)["metrics"][name].as_float().unwrap()
}

#[test]
fn synth_writes_identical_recordings_for_equal_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--out", p(&a)]);
    ok(&["synth", "--out", p(&b)]);
    let (fa, fb) = (sorted_files(&a, "csv"), sorted_files(&b, "csv"));
    assert_eq!(fa.len(), 12);
    let header = fs::read_to_string(&fa[0]).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 16);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    assert!(a.join("manifest.toml").is_file() && a.join("topology.toml").is_file());

    let c = tmp.path().join("c");
    ok(&["synth", "--out", p(&c), "--seed", "5"]);
    assert_ne!(fs::read(&fa[0]).unwrap(), fs::read(&sorted_files(&c, "csv")[0]).unwrap());
}

#[test]
fn synth_reports_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let err = fails(&["synth", "--out", p(&tmp.path().join("missing/parent/out"))]);
    assert!(err.contains("cannot create output directory"), "{err}");
    let cfg = write(tmp.path(), "bad.toml", "class_count = 1\n");
    let err = fails(&["synth", "--config", p(&cfg), "--out", p(&tmp.path().join("x"))]);
    assert!(err.contains("class_count"), "{err}");
    let cfg = write(tmp.path(), "typo.toml", "nodes = 4\n");
    fails(&["synth", "--config", p(&cfg), "--out", p(&tmp.path().join("y"))]);
    fails(&["synth", "--seed", "18446744073709551615", "--out", p(&tmp.path().join("w"))]);
}

#[test]
fn preprocess_builds_reproducible_archives() {
    let f = fixture("");
    assert_eq!(metric(&f.data, "sensors"), 16.0);
    assert_eq!(metric(&f.data, "features"), 150.0);
    let again = f.tmp.path().join("again");
    let pipe = f.tmp.path().join("pipe.toml");
    ok(&["preprocess", "--input", p(&f.tmp.path().join("raw")), "--config", p(&pipe), "--out", p(&again)]);
    assert_eq!(manifest(&f.data)["data_fingerprint"], manifest(&again)["data_fingerprint"]);
    assert_eq!(fs::read(f.data.join("dataset.fmgds")).unwrap(), fs::read(again.join("dataset.fmgds")).unwrap());

    let empty = f.tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let err = fails(&["preprocess", "--input", p(&empty), "--out", p(&f.tmp.path().join("z"))]);
    assert!(err.contains("no recordings"), "{err}");
}

#[test]
fn train_and_eval_round_trip() {
    let f = fixture("");
    let cfg = write(f.tmp.path(), "train.toml", "[train]\nepochs = 40\nhidden_width = 16\nbatch_size = 8\n");
    let run = f.tmp.path().join("run");
    let stdout = ok(&["train", "--data", p(&f.data), "--config", p(&cfg), "--out", p(&run)]);
    assert!(stdout.contains("holdout accuracy"), "{stdout}");
    let curve = fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 41);
    // four classes, so chance is 0.25
    assert!(metric(&run, "holdout_accuracy") >= 0.6);

    let rerun = f.tmp.path().join("rerun");
    ok(&["train", "--data", p(&f.data), "--config", p(&cfg), "--out", p(&rerun)]);
    assert_eq!(fs::read(run.join("checkpoint.json")).unwrap(), fs::read(rerun.join("checkpoint.json")).unwrap());

    let ev = f.tmp.path().join("ev");
    let stdout = ok(&["eval", "--data", p(&f.data), "--checkpoint", p(&run), "--out", p(&ev)]);
    assert!(stdout.starts_with("accuracy"), "{stdout}");
    let confusion = fs::read_to_string(ev.join("confusion.csv")).unwrap();
    assert!(confusion.starts_with("true\\pred,movement0,movement1,movement2,movement3"));
    let total: usize = confusion
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<usize>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(total as f64, metric(&ev, "samples"));
}

#[test]
fn train_rejects_zero_epochs() {
    let f = fixture("");
    let cfg = write(f.tmp.path(), "zero.toml", "[train]\nepochs = 0\n");
    let err = fails(&["train", "--data", p(&f.data), "--config", p(&cfg), "--out", p(&f.tmp.path().join("r"))]);
    assert!(err.contains("epochs"), "{err}");
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let f = fixture("");
    let cfg = write(f.tmp.path(), "train.toml", "[train]\nepochs = 1\nhidden_width = 4\n");
    let run = f.tmp.path().join("run");
    ok(&["train", "--data", p(&f.data), "--config", p(&cfg), "--out", p(&run)]);

    let small = fixture("node_count = 8\ninformative_sensors = [1, 4]\n");
    let err = fails(&["eval", "--data", p(&small.data), "--checkpoint", p(&run), "--out", p(&f.tmp.path().join("e"))]);
    assert!(err.contains("sensors"), "{err}");
}

#[test]
fn optimize_writes_curve_and_trace() {
    let f = fixture("");
    let cfg = write(
        f.tmp.path(),
        "opt.toml",
        "random_runs = 3\n[quantifier]\neval_policy = \"mask_only\"\n[quantifier.train_cfg]\nepochs = 20\nhidden_width = 16\n",
    );
    let out = f.tmp.path().join("opt");
    ok(&["optimize", "--data", p(&f.data), "--config", p(&cfg), "--k", "1..16", "--out", p(&out)]);
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 17);
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["steps"].as_array().unwrap().len(), 15);
    assert_eq!(trace["config_fingerprint"].as_str(), manifest(&out)["config_fingerprint"].as_str());
    assert!(!out.join("probability_map.csv").exists());
}

#[test]
fn optimize_maps_selection_across_subjects() {
    let f = fixture("subject_count = 2\n");
    let cfg = write(
        f.tmp.path(),
        "opt.toml",
        "random_runs = 2\nmap_k = 3\n[quantifier]\neval_policy = \"mask_only\"\n[quantifier.train_cfg]\nepochs = 10\nhidden_width = 8\n",
    );
    let out = f.tmp.path().join("opt");
    ok(&["optimize", "--data", p(&f.data), "--config", p(&cfg), "--k", "3..4", "--out", p(&out)]);
    let map = fs::read_to_string(out.join("probability_map.csv")).unwrap();
    let freqs: Vec<f64> = map.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(freqs.len(), 16);
    assert!((freqs.iter().sum::<f64>() - 3.0).abs() < 1e-12);
}

#[test]
fn exhaustive_over_budget_is_refused() {
    let f = fixture("");
    let err = fails(&["optimize", "--data", p(&f.data), "--mode", "exhaustive", "--k", "8", "--out", p(&f.tmp.path().join("o"))]);
    assert!(err.contains("refusing exhaustive search") && err.contains("12870"), "{err}");
}

#[test]
fn report_aggregates_manifests() {
    let f = fixture("");
    let cfg = write(f.tmp.path(), "train.toml", "[train]\nepochs = 2\nhidden_width = 4\n");
    let mut runs = Vec::new();
    for seed in 0..3 {
        let run = f.tmp.path().join(format!("run{seed}"));
        ok(&["train", "--data", p(&f.data), "--config", p(&cfg), "--seed", &seed.to_string(), "--out", p(&run)]);
        runs.push(run);
    }
    let csv_path = f.tmp.path().join("summary.csv");
    let mut args = vec!["report".to_string()];
    args.extend(runs.iter().map(|r| p(r).to_string()));
    args.extend(["--out".to_string(), p(&csv_path).to_string()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let values: Vec<f64> = runs.iter().map(|r| metric(r, "holdout_accuracy")).collect();
    let mean = values.iter().sum::<f64>() / 3.0;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let summary = fs::read_to_string(&csv_path).unwrap();
    let row = summary.lines().find(|l| l.contains(",holdout_accuracy,")).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(&cols[..4], &["train", "gamnet", "holdout_accuracy", "3"]);
    assert!((cols[4].parse::<f64>().unwrap() - mean).abs() < 1e-12);
    assert!((cols[5].parse::<f64>().unwrap() - sd).abs() < 1e-12);

    let single = ok(&["report", p(&runs[0])]);
    assert!(single.contains("holdout_accuracy"));
    fails(&["report"]);
    let err = fails(&["report", p(f.tmp.path())]);
    assert!(err.contains("no manifest"), "{err}");
}
