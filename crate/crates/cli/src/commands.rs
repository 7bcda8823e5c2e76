use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use fmg_spo::io::write_atomic;
use fmg_spo::models::Checkpoint;
use fmg_spo::seed::derive_seed;
use fmg_spo::signal::load_recording_dir;
use fmg_spo::spo::{
    accuracy_vs_k_curve, binomial, curve_csv, exhaustive_spo, greedy_spo, probability_map_csv,
    selection_probability_map, DataQuantifier, QuantifierConfig, TraceExport,
};
use fmg_spo::trainer::{cross_validate, evaluate, mean_sd, repeated_holdout, train as fit, TrainConfig};
use fmg_spo::{
    assemble_dataset, holdout_split, synth as synthetic, ArmbandTopology, Exec, PipelineConfig, SynthConfig,
    WindowedDataset,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::{now_unix_s, RunManifest};
use crate::SearchMode;

const DATASET_FILE: &str = "dataset.fmgds";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const TOPOLOGY_FILE: &str = "topology.toml";

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Creates `out` if needed. Its parent must already exist.
fn prepare_out_dir(out: &Path) -> Result<()> {
    if out.is_dir() {
        return Ok(());
    }
    std::fs::create_dir(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("cannot write {}", path.display()))
}

/// A path to a file, or to a run directory holding `file_name`.
fn resolve(path: &Path, file_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file_name)
    } else {
        path.to_path_buf()
    }
}

fn load_dataset(data: &Path) -> Result<(PathBuf, WindowedDataset)> {
    let path = resolve(data, DATASET_FILE);
    let ds = WindowedDataset::load(&path).with_context(|| format!("cannot load dataset {}", path.display()))?;
    Ok((path, ds))
}

/// Three ring bands of 6/6/4 for sixteen sensors, a single ring otherwise.
fn default_topology(n: usize) -> Result<ArmbandTopology> {
    if n == synthetic::DEFAULT_BANDS.iter().sum::<usize>() {
        Ok(ArmbandTopology::banded_rings(&synthetic::DEFAULT_BANDS)?)
    } else {
        Ok(ArmbandTopology::ring(n)?)
    }
}

fn load_topology(path: Option<&Path>, n: usize) -> Result<ArmbandTopology> {
    let topo = match path {
        Some(p) => ArmbandTopology::load(p).with_context(|| format!("cannot load topology {}", p.display()))?,
        None => default_topology(n)?,
    };
    ensure!(
        topo.node_count() == n,
        "topology has {} sensors but the dataset has {n}",
        topo.node_count()
    );
    Ok(topo)
}

/// Derived seed narrowed to 63 bits, since TOML integers are signed.
fn manifest_seed(root: u64, tag: u64) -> u64 {
    derive_seed(root, &[tag]) >> 1
}

pub fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let started = now_unix_s();
    let mut cfg: SynthConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let recs = synthetic::generate(&cfg)?;
    prepare_out_dir(out)?;
    let written = synthetic::write_recordings(out, &recs, &cfg.label_names())?;

    let mut m = RunManifest::new("synth", "synth", &cfg, started)?;
    m.seeds.push(cfg.seed);
    if let Some(c) = config {
        m.input(c);
    }
    written.iter().for_each(|p| m.output(p));
    let topo_path = out.join(TOPOLOGY_FILE);
    write_text(&topo_path, &default_topology(cfg.node_count)?.to_toml()?)?;
    m.output(&topo_path);
    m.metric("recordings", recs.len() as f64);
    m.write(out)?;
    println!(
        "wrote {} recordings of {} sensors x {} samples to {}",
        recs.len(),
        cfg.node_count,
        cfg.samples_per_recording(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(input: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let started = now_unix_s();
    let cfg: PipelineConfig = read_config(config)?;
    let loaded = load_recording_dir(input).with_context(|| format!("cannot read recordings in {}", input.display()))?;
    ensure!(!loaded.is_empty(), "no recordings (*.csv with *.toml metadata) in {}", input.display());

    let classes = loaded.iter().map(|(_, m)| m.label + 1).max().unwrap_or(0);
    let mut names: Vec<Option<String>> = vec![None; classes];
    for (_, meta) in &loaded {
        if let Some(name) = &meta.label_name {
            match &names[meta.label] {
                Some(seen) if seen != name => {
                    bail!("label {} is named both {seen:?} and {name:?}", meta.label)
                }
                _ => names[meta.label] = Some(name.clone()),
            }
        }
    }
    let names = names.into_iter().enumerate().map(|(c, n)| n.unwrap_or_else(|| format!("class{c}"))).collect();
    let recs: Vec<_> = loaded.into_iter().map(|(r, _)| r).collect();
    let ds = assemble_dataset(&recs, &cfg, Some(names), Exec::default())?;

    prepare_out_dir(out)?;
    let path = out.join(DATASET_FILE);
    let fp = ds.save(&path)?;
    let mut m = RunManifest::new("preprocess", "preprocess", &cfg, started)?;
    m.data_fingerprint = Some(fp.clone());
    m.input(input);
    m.output(&path);
    m.metric("samples", ds.len() as f64);
    m.metric("sensors", ds.node_count() as f64);
    m.metric("features", ds.feature_len() as f64);
    m.metric("classes", ds.class_count as f64);
    m.write(out)?;
    println!(
        "{} windows of {} sensors x {} points from {} recordings, {} classes",
        ds.len(),
        ds.node_count(),
        ds.feature_len(),
        recs.len(),
        ds.class_count
    );
    println!("dataset fingerprint {fp}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Fraction of each class used for training; the rest is the holdout.
    pub train_fraction: f64,
    /// Extra k-fold cross-validation over the whole dataset when nonzero.
    pub cv_folds: usize,
    /// Extra repeated holdout runs with derived seeds when nonzero.
    pub repeats: usize,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, cv_folds: 0, repeats: 0, train: TrainConfig::default() }
    }
}

fn model_label(cfg: &TrainConfig) -> &'static str {
    match cfg.model_kind {
        fmg_spo::ModelKind::GamNet => "gamnet",
        fmg_spo::ModelKind::Mlp => "mlp",
    }
}

pub fn train(data: &Path, topology: Option<&Path>, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let started = now_unix_s();
    let mut cfg: TrainRunConfig = read_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    let (data_path, ds) = load_dataset(data)?;
    let topo = load_topology(topology, ds.node_count())?;
    let a_hat = topo.normalized_adjacency();

    let (tr, te) = holdout_split(&ds, cfg.train_fraction, derive_seed(cfg.train.seed, &[0x5B17]))?;
    let outcome = fit(&tr, &a_hat, &cfg.train).context("training failed")?;
    let report = evaluate(&outcome.model, &te, &a_hat)?;

    prepare_out_dir(out)?;
    let mut m = RunManifest::new("train", model_label(&cfg.train), &cfg, started)?;
    m.seeds.push(cfg.train.seed);
    m.data_fingerprint = Some(ds.fingerprint()?);
    m.input(&data_path);
    if let Some(t) = topology {
        m.input(t);
    }

    let ckpt = Checkpoint::new(outcome.model.clone(), cfg.train.shape_for(&ds), cfg.train.seed, ds.label_names.clone());
    let ckpt_path = out.join(CHECKPOINT_FILE);
    ckpt.save(&ckpt_path)?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_curve.iter().enumerate() {
        let _ = writeln!(curve, "{},{l}", e + 1);
    }
    let curve_path = out.join("loss_curve.csv");
    write_text(&curve_path, &curve)?;
    let confusion_path = out.join("confusion.csv");
    write_text(&confusion_path, &report.confusion_csv(&ds.label_names))?;
    let topo_path = out.join(TOPOLOGY_FILE);
    write_text(&topo_path, &topo.to_toml()?)?;
    for p in [&ckpt_path, &curve_path, &confusion_path, &topo_path] {
        m.output(p);
    }

    m.metric("holdout_accuracy", report.accuracy);
    m.metric("final_loss", *outcome.loss_curve.last().expect("at least one epoch"));
    m.metric("parameters", outcome.model.parameter_count() as f64);
    println!(
        "{} with {} parameters: final loss {:.4}, holdout accuracy {:.4} on {} windows",
        model_label(&cfg.train),
        outcome.model.parameter_count(),
        outcome.loss_curve.last().unwrap(),
        report.accuracy,
        report.sample_count
    );

    if cfg.cv_folds > 0 {
        let cv = cross_validate(&ds, &a_hat, &cfg.train, cfg.cv_folds)?;
        let mut csv = String::from("fold,accuracy\n");
        for (i, a) in cv.fold_accuracies.iter().enumerate() {
            let _ = writeln!(csv, "{i},{a}");
        }
        let cv_path = out.join("cv_folds.csv");
        write_text(&cv_path, &csv)?;
        m.output(&cv_path);
        m.metric("cv_mean", cv.mean);
        m.metric("cv_sd", cv.sd);
        println!("{}-fold cross-validation: {:.4} ± {:.4}", cfg.cv_folds, cv.mean, cv.sd);
    }
    if cfg.repeats > 0 {
        let r = repeated_holdout(&ds, &a_hat, &cfg.train, cfg.train_fraction, cfg.repeats)?;
        m.metric("repeat_mean", r.mean);
        m.metric("repeat_sd", r.sd);
        println!("{} holdout repeats: {:.4} ± {:.4}", cfg.repeats, r.mean, r.sd);
    }
    m.write(out)?;
    Ok(())
}

pub fn eval(data: &Path, checkpoint: &Path, topology: Option<&Path>, out: &Path) -> Result<()> {
    let started = now_unix_s();
    let (data_path, ds) = load_dataset(data)?;
    let ckpt_path = resolve(checkpoint, CHECKPOINT_FILE);
    let ckpt = Checkpoint::load(&ckpt_path).with_context(|| format!("cannot load checkpoint {}", ckpt_path.display()))?;
    // A train run directory carries the topology it was trained with.
    let beside = checkpoint.join(TOPOLOGY_FILE);
    let topo_path = topology.map(Path::to_path_buf).or_else(|| beside.is_file().then_some(beside));
    let topo = load_topology(topo_path.as_deref(), ds.node_count())?;
    let report = evaluate(&ckpt.model, &ds, &topo.normalized_adjacency())
        .with_context(|| format!("checkpoint {} does not fit dataset {}", ckpt_path.display(), data_path.display()))?;

    prepare_out_dir(out)?;
    let names = if ckpt.label_names.is_empty() { ds.label_names.clone() } else { ckpt.label_names.clone() };
    let confusion_path = out.join("confusion.csv");
    write_text(&confusion_path, &report.confusion_csv(&names))?;

    let label = match ckpt.model.kind() {
        fmg_spo::ModelKind::GamNet => "gamnet",
        fmg_spo::ModelKind::Mlp => "mlp",
    };
    let mut m = RunManifest::new("eval", label, &ckpt.shape, started)?;
    m.seeds.push(ckpt.seed);
    m.data_fingerprint = Some(ds.fingerprint()?);
    m.input(&data_path);
    m.input(&ckpt_path);
    m.output(&confusion_path);
    m.metric("accuracy", report.accuracy);
    m.metric("samples", report.sample_count as f64);
    m.write(out)?;

    println!("accuracy {:.4} on {} windows ({:.3} s)", report.accuracy, report.sample_count, report.wall_time_s);
    for (c, r) in report.per_class_recall.iter().enumerate() {
        println!("  {:<12} recall {r:.4}", names.get(c).map(String::as_str).unwrap_or("?"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Root seed. The quantifier's training and split seeds and the random
    /// baseline seed are derived from it.
    pub seed: u64,
    pub mode: SearchMode,
    pub k_min: usize,
    /// Defaults to the sensor count.
    pub k_max: Option<usize>,
    pub random_runs: usize,
    pub exhaustive_budget: u64,
    /// Subset size for the per-subject selection map; defaults to `k_min`.
    pub map_k: Option<usize>,
    pub quantifier: QuantifierConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: SearchMode::Greedy,
            k_min: 1,
            k_max: None,
            random_runs: 10,
            exhaustive_budget: fmg_spo::spo::DEFAULT_EXHAUSTIVE_BUDGET as u64,
            map_k: None,
            quantifier: QuantifierConfig::default(),
        }
    }
}

pub struct OptimizeOverrides {
    pub k: Option<String>,
    pub mode: Option<SearchMode>,
    pub seed: Option<u64>,
}

/// Parses `k` or an inclusive range `a..b`.
fn parse_k(text: &str) -> Result<(usize, usize)> {
    let parse = |s: &str| s.trim().parse::<usize>().with_context(|| format!("bad sensor count {s:?}"));
    match text.split_once("..") {
        Some((a, b)) => Ok((parse(a)?, parse(b.trim_start_matches('='))?)),
        None => {
            let k = parse(text)?;
            Ok((k, k))
        }
    }
}

pub fn optimize(
    data: &Path,
    topology: Option<&Path>,
    config: Option<&Path>,
    overrides: OptimizeOverrides,
    out: &Path,
) -> Result<()> {
    let started = now_unix_s();
    let mut cfg: OptimizeConfig = read_config(config)?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(mode) = overrides.mode {
        cfg.mode = mode;
    }
    if let Some(k) = &overrides.k {
        let (a, b) = parse_k(k)?;
        cfg.k_min = a;
        cfg.k_max = Some(b);
    }
    let (data_path, ds) = load_dataset(data)?;
    let n = ds.node_count();
    let k_max = *cfg.k_max.get_or_insert(n);
    ensure!(
        1 <= cfg.k_min && cfg.k_min <= k_max && k_max <= n,
        "sensor counts must satisfy 1 <= k_min <= k_max <= {n}, got {}..{k_max}",
        cfg.k_min
    );
    cfg.quantifier.train_cfg.seed = manifest_seed(cfg.seed, 1);
    cfg.quantifier.inner_split_seed = manifest_seed(cfg.seed, 2);
    let baseline_seed = manifest_seed(cfg.seed, 3);
    let topo = load_topology(topology, n)?;
    let ks: Vec<usize> = (cfg.k_min..=k_max).collect();

    if cfg.mode == SearchMode::Exhaustive {
        for &k in &ks {
            let subsets = binomial(n, k);
            ensure!(
                subsets <= cfg.exhaustive_budget as u128,
                "refusing exhaustive search: C({n},{k}) = {subsets} subsets exceeds the budget of {}",
                cfg.exhaustive_budget
            );
        }
    }

    let mut m = RunManifest::new("optimize", format!("{:?}", cfg.mode).to_lowercase(), &cfg, started)?;
    let q = DataQuantifier::new(&ds, &topo, &cfg.quantifier)?;
    prepare_out_dir(out)?;
    m.seeds = vec![cfg.seed, cfg.quantifier.train_cfg.seed, cfg.quantifier.inner_split_seed, baseline_seed];
    m.data_fingerprint = Some(ds.fingerprint()?);
    m.input(&data_path);
    if let Some(t) = topology {
        m.input(t);
    }

    match cfg.mode {
        SearchMode::Exhaustive => {
            let mut csv = String::from("k,value,selection\n");
            println!("{:>3}  {:>8}  selection", "k", "value");
            for &k in &ks {
                let r = exhaustive_spo(&q, k, cfg.exhaustive_budget as u128, Exec::default())?;
                let _ = writeln!(csv, "{k},{},{}", r.value, r.selection.bitstring());
                m.metric(format!("exhaustive_k{k:02}"), r.value);
                println!("{k:>3}  {:>8.4}  {:?}", r.value, r.selection.indices());
            }
            let path = out.join("exhaustive.csv");
            write_text(&path, &csv)?;
            m.output(&path);
        }
        SearchMode::Greedy => {
            let report = accuracy_vs_k_curve(&q, &ks, cfg.random_runs, baseline_seed, Exec::default())?;
            let curve_path = out.join("curve.csv");
            write_text(&curve_path, &curve_csv(&report.rows))?;
            m.output(&curve_path);
            if let Some(trace) = &report.trace {
                let export = TraceExport { config_fingerprint: m.config_fingerprint.clone(), trace: trace.clone() };
                let trace_path = out.join("trace.json");
                write_text(&trace_path, &export.to_json()?)?;
                m.output(&trace_path);
                println!("removal order {:?}", trace.removal_order());
                println!("selected at k={}: {:?}", cfg.k_min, trace.final_selection.indices());
            }
            m.metric("full_accuracy", report.full_value);
            println!("{:>3}  {:>8}  {:>12}", "k", "greedy", "random");
            for r in &report.rows {
                m.metric(format!("greedy_k{:02}", r.k), r.greedy_accuracy);
                m.metric(format!("random_k{:02}", r.k), r.random_mean);
                println!("{:>3}  {:>8.4}  {:>6.4}±{:.4}", r.k, r.greedy_accuracy, r.random_mean, r.random_sd);
            }

            let subjects = ds.subjects();
            if subjects.len() > 1 {
                let map_k = cfg.map_k.unwrap_or(cfg.k_min);
                ensure!(map_k >= 1 && map_k < n, "map_k must lie in 1..{n}, got {map_k}");
                let traces = subjects
                    .iter()
                    .map(|s| {
                        let sub = ds.subset(&ds.indices_for_subject(s));
                        let q = DataQuantifier::new(&sub, &topo, &cfg.quantifier)
                            .with_context(|| format!("subject {s}"))?;
                        Ok(greedy_spo(&q, map_k, Exec::default())?.1)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let freq = selection_probability_map(&traces, map_k)?;
                let map_path = out.join("probability_map.csv");
                write_text(&map_path, &probability_map_csv(&freq))?;
                m.output(&map_path);
                println!("selection frequency at k={map_k} over {} subjects: {freq:?}", subjects.len());
            }
        }
    }
    m.write(out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub command: String,
    pub label: String,
    pub metric: String,
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Groups manifests by (command, label) and summarizes each metric as
/// mean ± population SD across the runs that report it.
pub fn summarize(manifests: &[RunManifest]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for m in manifests {
        for (metric, &v) in &m.metrics {
            groups.entry((m.command.clone(), m.label.clone(), metric.clone())).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|((command, label, metric), values)| {
            let (mean, sd) = mean_sd(&values);
            SummaryRow { command, label, metric, runs: values.len(), mean, sd }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("command,label,metric,runs,mean,sd\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.command, r.label, r.metric, r.runs, r.mean, r.sd);
    }
    out
}

pub fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    ensure!(!runs.is_empty(), "no run directories given");
    let manifests = runs.iter().map(|d| RunManifest::load(d)).collect::<Result<Vec<_>>>()?;
    let rows = summarize(&manifests);
    println!("{:<10} {:<10} {:<18} {:>4} {:>10} {:>10}", "command", "label", "metric", "runs", "mean", "sd");
    for r in &rows {
        println!("{:<10} {:<10} {:<18} {:>4} {:>10.4} {:>10.4}", r.command, r.label, r.metric, r.runs, r.mean, r.sd);
    }
    if let Some(path) = out {
        write_text(path, &summary_csv(&rows))?;
    }
    Ok(())
}
