//! Sensor placement optimization: pick the `k`-sensor subset that maximizes
//! a recognition-accuracy quantifier.
//!
//! [`greedy_spo`] performs backward elimination. Starting from every
//! sensor, each step tries dropping each survivor and removes the one whose
//! absence leaves the highest score. [`exhaustive_spo`] scores every
//! `k`-subset and serves as the oracle for small problems.
//! [`random_selection_baseline`] draws uniform subsets for comparison.

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::{holdout_indices, WindowedDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{ArmbandTopology, NormalizedAdjacency, SensorId};
use crate::models::{Model, ModelKind};
use crate::seed::{derive_seed, rng_from};
use crate::selection::SelectionVector;
use crate::trainer::{evaluate_masked, mean_sd, train_masked, TrainConfig};

/// Scores a sensor subset. Implementations must be deterministic: the same
/// selection always yields the same value.
pub trait Quantifier: Sync {
    fn node_count(&self) -> usize;
    fn score(&self, s: &SelectionVector) -> Result<f64>;
}

/// Adapts a closure into a [`Quantifier`].
pub struct FnQuantifier<F> {
    node_count: usize,
    f: F,
}

impl<F> FnQuantifier<F>
where
    F: Fn(&SelectionVector) -> f64 + Sync,
{
    pub fn new(node_count: usize, f: F) -> Self {
        Self { node_count, f }
    }
}

impl<F> Quantifier for FnQuantifier<F>
where
    F: Fn(&SelectionVector) -> f64 + Sync,
{
    fn node_count(&self) -> usize {
        self.node_count
    }

    fn score(&self, s: &SelectionVector) -> Result<f64> {
        s.ensure_len(self.node_count)?;
        s.ensure_nonempty()?;
        Ok((self.f)(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    /// Train a fresh classifier on the masked data for every subset.
    Retrain,
    /// Score a single classifier trained once on all sensors.
    MaskOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Zero the features of unselected sensors; the graph is unchanged.
    ZeroFeatures,
    /// Delete unselected sensors from both the data and the graph.
    RemoveNodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantifierConfig {
    pub eval_policy: EvalPolicy,
    pub masking: MaskingMode,
    pub inner_split_seed: u64,
    /// Share of the data held out for scoring subsets.
    pub validation_fraction: f64,
    pub train_cfg: TrainConfig,
}

impl Default for QuantifierConfig {
    fn default() -> Self {
        Self {
            eval_policy: EvalPolicy::Retrain,
            masking: MaskingMode::ZeroFeatures,
            inner_split_seed: 0,
            validation_fraction: 0.2,
            train_cfg: TrainConfig { epochs: 50, ..TrainConfig::default() },
        }
    }
}

/// Validation accuracy of a classifier under a sensor mask, computed on a
/// fixed stratified inner split of the data it is given.
pub struct DataQuantifier {
    train: WindowedDataset,
    valid: WindowedDataset,
    topology: ArmbandTopology,
    a_hat: NormalizedAdjacency,
    cfg: QuantifierConfig,
    frozen: Option<Model>,
}

impl DataQuantifier {
    /// Splits `ds`; under [`EvalPolicy::MaskOnly`] also trains the frozen
    /// full-sensor model on the training part.
    pub fn new(ds: &WindowedDataset, topology: &ArmbandTopology, cfg: &QuantifierConfig) -> Result<Self> {
        let mut q = Self::split(ds, topology, cfg)?;
        if cfg.eval_policy == EvalPolicy::MaskOnly {
            q.frozen = Some(train_masked(&q.train, &q.a_hat, &cfg.train_cfg, None)?.model);
        }
        Ok(q)
    }

    /// Mask-only quantifier around an already trained model.
    pub fn with_model(ds: &WindowedDataset, topology: &ArmbandTopology, cfg: &QuantifierConfig, model: Model) -> Result<Self> {
        let mut q = Self::split(ds, topology, cfg)?;
        q.cfg.eval_policy = EvalPolicy::MaskOnly;
        q.frozen = Some(model);
        Ok(q)
    }

    fn split(ds: &WindowedDataset, topology: &ArmbandTopology, cfg: &QuantifierConfig) -> Result<Self> {
        cfg.train_cfg.validate()?;
        if topology.node_count() != ds.node_count() {
            return Err(Error::Shape(format!(
                "topology has {} sensors, dataset has {}",
                topology.node_count(),
                ds.node_count()
            )));
        }
        let (train_idx, valid_idx) = holdout_indices(ds, 1.0 - cfg.validation_fraction, cfg.inner_split_seed)?;
        Ok(Self {
            train: ds.subset(&train_idx),
            valid: ds.subset(&valid_idx),
            topology: topology.clone(),
            a_hat: topology.normalized_adjacency(),
            cfg: cfg.clone(),
            frozen: None,
        })
    }

    pub fn frozen_model(&self) -> Option<&Model> {
        self.frozen.as_ref()
    }

    pub fn validation_set(&self) -> &WindowedDataset {
        &self.valid
    }

    pub fn training_set(&self) -> &WindowedDataset {
        &self.train
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.a_hat
    }

    pub fn config(&self) -> &QuantifierConfig {
        &self.cfg
    }

    /// Training seed for a subset: a function of the subset alone, so scores
    /// do not depend on evaluation order or thread scheduling.
    fn subset_seed(&self, s: &SelectionVector) -> u64 {
        derive_seed(self.cfg.train_cfg.seed, &[0x5E1E, s.key()])
    }

    fn retrain_cfg(&self, s: &SelectionVector) -> TrainConfig {
        TrainConfig { seed: self.subset_seed(s), exec: Exec::Sequential, ..self.cfg.train_cfg.clone() }
    }
}

impl Quantifier for DataQuantifier {
    fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    fn score(&self, s: &SelectionVector) -> Result<f64> {
        s.ensure_len(self.node_count())?;
        s.ensure_nonempty()?;
        match self.cfg.masking {
            MaskingMode::ZeroFeatures => {
                let model = match &self.frozen {
                    Some(m) => m.clone(),
                    None => train_masked(&self.train, &self.a_hat, &self.retrain_cfg(s), Some(s))?.model,
                };
                Ok(evaluate_masked(&model, &self.valid, &self.a_hat, Some(s), Exec::Sequential)?.accuracy)
            }
            MaskingMode::RemoveNodes => {
                let keep = s.indices();
                let a_sub = self.topology.subgraph(s)?.normalized_adjacency();
                let valid = self.valid.select_nodes(&keep);
                let model = match &self.frozen {
                    Some(m) if m.kind() == ModelKind::GamNet => m.clone(),
                    Some(_) => {
                        return Err(Error::Config(
                            "node removal with a frozen model needs the graph model; the flat model's input size depends on the sensor count".into(),
                        ))
                    }
                    None => train_masked(&self.train.select_nodes(&keep), &a_sub, &self.retrain_cfg(s), None)?.model,
                };
                Ok(evaluate_masked(&model, &valid, &a_sub, None, Exec::Sequential)?.accuracy)
            }
        }
    }
}

/// One-shot convenience: builds a [`DataQuantifier`] and scores `s`.
pub fn quantify(ds: &WindowedDataset, topology: &ArmbandTopology, s: &SelectionVector, cfg: &QuantifierConfig) -> Result<f64> {
    s.ensure_nonempty()?;
    DataQuantifier::new(ds, topology, cfg)?.score(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub removed: SensorId,
    pub surviving: SelectionVector,
    pub value: f64,
}

/// Ordered record of greedy removals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub node_count: usize,
    pub target_k: usize,
    pub steps: Vec<TraceStep>,
    #[serde(rename = "final")]
    pub final_selection: SelectionVector,
}

impl OptimizationTrace {
    /// Surviving set of size `k`, if the trace passed through it.
    pub fn surviving_at(&self, k: usize) -> Option<&SelectionVector> {
        self.steps.iter().find(|s| s.surviving.count() == k).map(|s| &s.surviving)
    }

    pub fn value_at(&self, k: usize) -> Option<f64> {
        self.steps.iter().find(|s| s.surviving.count() == k).map(|s| s.value)
    }

    pub fn removal_order(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.removed.0).collect()
    }
}

/// Trace plus the fingerprint of the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceExport {
    pub config_fingerprint: String,
    #[serde(flatten)]
    pub trace: OptimizationTrace,
}

impl TraceExport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_k(k: usize, min: usize, max: usize) -> Result<()> {
    if k < min || k > max {
        return Err(Error::KOutOfRange { k, min, max });
    }
    Ok(())
}

/// Index of the first maximum; earlier entries win ties.
fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Backward elimination down to `k` sensors (`1 ≤ k < N`).
///
/// Candidates are tried in ascending sensor order and the first maximizer
/// wins, so ties remove the lowest-index sensor. Candidate scores within a
/// step are computed with `exec`; the reduction is sequential.
pub fn greedy_spo<Q: Quantifier + ?Sized>(q: &Q, k: usize, exec: Exec) -> Result<(SelectionVector, OptimizationTrace)> {
    let n = q.node_count();
    check_k(k, 1, n.saturating_sub(1))?;
    let mut current = SelectionVector::all(n);
    let mut steps = Vec::with_capacity(n - k);
    while current.count() > k {
        let candidates = current.indices();
        let scores = exec
            .map(&candidates, |&i| q.score(&current.without(i)))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let pick = first_max(&scores);
        current = current.without(candidates[pick]);
        steps.push(TraceStep { removed: SensorId(candidates[pick]), surviving: current.clone(), value: scores[pick] });
    }
    let trace = OptimizationTrace { node_count: n, target_k: k, steps, final_selection: current.clone() };
    Ok((current, trace))
}

/// Default cap on the number of subsets [`exhaustive_spo`] will score.
pub const DEFAULT_EXHAUSTIVE_BUDGET: u128 = 10_000;

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `k`-subsets of `0..n` as sorted index lists, in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub selection: SelectionVector,
    pub value: f64,
    pub evaluated: usize,
}

/// Scores every `k`-subset. Ties go to the lexicographically smallest bit
/// vector (sensor 0 first, `0 < 1`).
pub fn exhaustive_spo<Q: Quantifier + ?Sized>(q: &Q, k: usize, budget: u128, exec: Exec) -> Result<ExhaustiveResult> {
    let n = q.node_count();
    check_k(k, 1, n)?;
    let subsets = binomial(n, k);
    if subsets > budget {
        return Err(Error::BudgetExceeded { subsets, budget });
    }
    let candidates = k_subsets(n, k)
        .into_iter()
        .map(|idx| SelectionVector::from_indices(n, &idx))
        .collect::<Result<Vec<_>>>()?;
    let scores = exec
        .map(&candidates, |s| q.score(s))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for i in 1..candidates.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    Ok(ExhaustiveResult { selection: candidates[best].clone(), value: scores[best], evaluated: candidates.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomBaseline {
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
    pub subsets: Vec<SelectionVector>,
}

/// Scores `runs` uniformly drawn `k`-subsets (drawn independently, so
/// repeats are possible).
pub fn random_selection_baseline<Q: Quantifier + ?Sized>(
    q: &Q,
    k: usize,
    runs: usize,
    seed: u64,
    exec: Exec,
) -> Result<RandomBaseline> {
    let n = q.node_count();
    check_k(k, 1, n)?;
    if runs == 0 {
        return Err(Error::Config("random baseline needs at least one run".into()));
    }
    let mut rng = rng_from(seed, &[0xBA5E, k as u64]);
    let subsets = (0..runs)
        .map(|_| SelectionVector::from_indices(n, &sample(&mut rng, n, k).into_vec()))
        .collect::<Result<Vec<_>>>()?;
    let values = exec
        .map(&subsets, |s| q.score(s))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let (mean, sd) = mean_sd(&values);
    Ok(RandomBaseline { mean, sd, values, subsets })
}

/// Fraction of traces whose size-`k` surviving set contains each sensor.
pub fn selection_probability_map(traces: &[OptimizationTrace], k: usize) -> Result<Vec<f64>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Inconsistent("no traces to aggregate".into()))?;
    let n = first.node_count;
    let mut counts = vec![0usize; n];
    for (i, t) in traces.iter().enumerate() {
        if t.node_count != n {
            return Err(Error::Inconsistent(format!(
                "trace {i} covers {} sensors, expected {n}",
                t.node_count
            )));
        }
        let all = SelectionVector::all(n);
        let set = if k == n {
            &all
        } else {
            t.surviving_at(k).ok_or_else(|| {
                Error::Inconsistent(format!("trace {i} never reaches {k} sensors"))
            })?
        };
        for j in set.indices() {
            counts[j] += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / traces.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub greedy_accuracy: f64,
    pub random_mean: f64,
    pub random_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveReport {
    pub rows: Vec<CurveRow>,
    pub full_value: f64,
    pub trace: Option<OptimizationTrace>,
}

/// Greedy and random-baseline scores for every `k` in `k_values`. A single
/// greedy run down to the smallest `k` supplies every intermediate value.
pub fn accuracy_vs_k_curve<Q: Quantifier + ?Sized>(
    q: &Q,
    k_values: &[usize],
    random_runs: usize,
    seed: u64,
    exec: Exec,
) -> Result<CurveReport> {
    let n = q.node_count();
    for &k in k_values {
        check_k(k, 1, n)?;
    }
    let k_min = *k_values
        .iter()
        .min()
        .ok_or_else(|| Error::Config("empty k range".into()))?;
    let full_value = q.score(&SelectionVector::all(n))?;
    let trace = if k_min < n { Some(greedy_spo(q, k_min, exec)?.1) } else { None };
    let rows = k_values
        .iter()
        .map(|&k| {
            let greedy_accuracy = if k == n {
                full_value
            } else {
                trace.as_ref().and_then(|t| t.value_at(k)).expect("trace covers every k above its target")
            };
            let random = random_selection_baseline(q, k, random_runs, seed, exec)?;
            Ok(CurveRow { k, greedy_accuracy, random_mean: random.mean, random_sd: random.sd })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveReport { rows, full_value, trace })
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("k,greedy_accuracy,random_mean,random_sd\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.k, r.greedy_accuracy, r.random_mean, r.random_sd);
    }
    out
}

pub fn probability_map_csv(frequencies: &[f64]) -> String {
    let mut out = String::from("sensor_id,frequency\n");
    for (i, f) in frequencies.iter().enumerate() {
        let _ = writeln!(out, "{i},{f}");
    }
    out
}
