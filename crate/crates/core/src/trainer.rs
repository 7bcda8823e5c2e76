//! Mini-batch gradient descent on cross-entropy with hand-derived gradients,
//! plus accuracy/confusion evaluation and k-fold cross-validation.

use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{holdout_indices, split_folds, WindowedDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::NormalizedAdjacency;
use crate::models::{argmax, relu, softmax, ClassDistribution, GamNetParams, MlpParams, Model, ModelKind, ModelShape};
use crate::seed::{derive_seed, rng_from};
use crate::selection::SelectionVector;

/// Floor added inside the log so a zero probability yields a finite loss.
pub const LOSS_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub model_kind: ModelKind,
    pub hidden_width: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
            model_kind: ModelKind::GamNet,
            hidden_width: 64,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 10.0) {
            return Err(Error::Config(format!("learning rate must lie in (0, 10), got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::Config("batch size and hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn shape_for(&self, ds: &WindowedDataset) -> ModelShape {
        ModelShape {
            node_count: ds.node_count(),
            feature_len: ds.feature_len(),
            hidden: self.hidden_width,
            classes: ds.class_count,
        }
    }
}

/// `−ln(p[label] + ε)`.
pub fn cross_entropy(dist: &ClassDistribution, label: usize) -> Result<f64> {
    let p = dist
        .probs()
        .get(label)
        .ok_or(Error::Label { label, classes: dist.class_count() })?;
    Ok(-(p + LOSS_EPSILON).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamNetGrads {
    pub dw0: Array2<f64>,
    pub dw1: Array2<f64>,
    pub loss: f64,
}

/// Exact gradients of `cross_entropy(gamnet_forward(p, x, Â), label)`.
///
/// With `P = Â·X`, `U = P·W0`, `V = relu(U)`, `Q = Â·V`, node logits
/// `Z = Q·W1` and pooled logits `ℓ = mean_rows(Z)`:
/// `∂L/∂ℓ = softmax(ℓ) − onehot`, every row of `∂L/∂Z` is `(∂L/∂ℓ)/N`,
/// `∂L/∂W1 = Qᵀ·∂Z`, `∂L/∂V = Âᵀ·∂Z·W1ᵀ`, `∂L/∂U = ∂V ⊙ [U > 0]` and
/// `∂L/∂W0 = Pᵀ·∂U`.
pub fn gamnet_gradients(
    p: &GamNetParams,
    x: ArrayView2<'_, f64>,
    a_hat: &NormalizedAdjacency,
    label: usize,
) -> Result<GamNetGrads> {
    p.check(x, a_hat)?;
    if label >= p.classes() {
        return Err(Error::Label { label, classes: p.classes() });
    }
    let a = a_hat.matrix();
    let n = a.nrows() as f64;
    let prop = a.dot(&x);
    let pre = prop.dot(&p.w0);
    let hidden = relu(&pre);
    let mixed = a.dot(&hidden);
    let z = mixed.dot(&p.w1);
    let dist = softmax(z.mean_axis(Axis(0)).expect("nodes").as_slice().expect("contiguous"));
    let loss = cross_entropy(&dist, label)?;

    let mut dlogits = Array1::from(dist.probs().to_vec());
    dlogits[label] -= 1.0;
    let dz = Array2::from_shape_fn(z.dim(), |(_, c)| dlogits[c] / n);
    let dw1 = mixed.t().dot(&dz);
    let mut dpre = a.t().dot(&dz.dot(&p.w1.t()));
    dpre.zip_mut_with(&pre, |d, &u| {
        if u <= 0.0 {
            *d = 0.0;
        }
    });
    let dw0 = prop.t().dot(&dpre);
    Ok(GamNetGrads { dw0, dw1, loss })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub dw0: Array2<f64>,
    pub db0: Array1<f64>,
    pub dw1: Array2<f64>,
    pub db1: Array1<f64>,
    pub loss: f64,
}

/// Exact gradients of `cross_entropy(mlp_forward(p, x), label)`.
pub fn mlp_gradients(p: &MlpParams, x: ArrayView2<'_, f64>, label: usize) -> Result<MlpGrads> {
    p.check_inputs(x.len())?;
    let classes = p.w1.ncols();
    if label >= classes {
        return Err(Error::Label { label, classes });
    }
    let flat = Array1::from_iter(x.iter().copied());
    let pre = flat.dot(&p.w0) + &p.b0;
    let hidden = relu(&pre);
    let dist = softmax((hidden.dot(&p.w1) + &p.b1).as_slice().expect("contiguous"));
    let loss = cross_entropy(&dist, label)?;
    let mut db1 = Array1::from(dist.probs().to_vec());
    db1[label] -= 1.0;
    let dw1 = outer(&hidden, &db1);
    let mut db0 = p.w1.dot(&db1);
    db0.zip_mut_with(&pre, |d, &u| {
        if u <= 0.0 {
            *d = 0.0;
        }
    });
    let dw0 = outer(&flat, &db0);
    Ok(MlpGrads { dw0, db0, dw1, db1, loss })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Inputs laid out for batched matrix products, with the selection mask
/// already applied. For the graph model each sample contributes N rows of
/// `Â·diag(s)·X`; for the flat model one row of `flatten(diag(s)·X)`.
struct Prepared {
    rows_per_sample: usize,
    data: Array2<f64>,
    pool: Vec<f64>,
}

impl Prepared {
    fn new(kind: ModelKind, ds: &WindowedDataset, a_hat: &NormalizedAdjacency, mask: Option<&SelectionVector>) -> Result<Self> {
        let (n, f) = (ds.node_count(), ds.feature_len());
        if let Some(s) = mask {
            s.ensure_len(n)?;
        }
        let weights = mask.map_or_else(|| vec![1.0; n], SelectionVector::weights);
        match kind {
            ModelKind::GamNet => {
                if a_hat.node_count() != n {
                    return Err(Error::Shape(format!(
                        "dataset has {n} sensors, adjacency is {0}x{0}",
                        a_hat.node_count()
                    )));
                }
                let mut masked_a = a_hat.matrix().clone();
                for (j, mut col) in masked_a.columns_mut().into_iter().enumerate() {
                    col *= weights[j];
                }
                let mut data = Array2::zeros((ds.len() * n, f));
                for i in 0..ds.len() {
                    let mut block = data.slice_mut(s![i * n..(i + 1) * n, ..]);
                    ndarray::linalg::general_mat_mul(1.0, &masked_a, &ds.sample(i), 0.0, &mut block);
                }
                Ok(Self { rows_per_sample: n, data, pool: a_hat.pooling_weights() })
            }
            ModelKind::Mlp => {
                let mut data = ds
                    .features
                    .to_shape((ds.len(), n * f))
                    .map_err(|e| Error::Shape(e.to_string()))?
                    .into_owned();
                for mut row in data.rows_mut() {
                    for (node, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            row.slice_mut(s![node * f..(node + 1) * f]).fill(0.0);
                        }
                    }
                }
                Ok(Self { rows_per_sample: 1, data, pool: Vec::new() })
            }
        }
    }

    fn gather(&self, samples: &[usize]) -> Array2<f64> {
        let r = self.rows_per_sample;
        let mut out = Array2::zeros((samples.len() * r, self.data.ncols()));
        for (b, &i) in samples.iter().enumerate() {
            out.slice_mut(s![b * r..(b + 1) * r, ..])
                .assign(&self.data.slice(s![i * r..(i + 1) * r, ..]));
        }
        out
    }

    fn contiguous(&self, start: usize, end: usize) -> ArrayView2<'_, f64> {
        let r = self.rows_per_sample;
        self.data.slice(s![start * r..end * r, ..])
    }

    /// Pooled graph features `G[b] = Σₙ poolₙ · relu(U)[b·N + n]`.
    fn pool_hidden(&self, hidden: &Array2<f64>, batch: usize) -> Array2<f64> {
        let n = self.rows_per_sample;
        let mut pooled = Array2::zeros((batch, hidden.ncols()));
        for b in 0..batch {
            let mut g = pooled.row_mut(b);
            for (k, &w) in self.pool.iter().enumerate() {
                g.scaled_add(w, &hidden.row(b * n + k));
            }
        }
        pooled
    }

    fn logits(&self, model: &Model, x: ArrayView2<'_, f64>, batch: usize) -> Array2<f64> {
        match model {
            Model::GamNet(p) => self.pool_hidden(&relu(&x.dot(&p.w0)), batch).dot(&p.w1),
            Model::Mlp(p) => relu(&(x.dot(&p.w0) + &p.b0)).dot(&p.w1) + &p.b1,
        }
    }

    /// Batch-mean loss and gradient step applied in place.
    fn step(&self, model: &mut Model, samples: &[usize], labels: &[usize], lr: f64) -> f64 {
        let x = self.gather(samples);
        let batch = samples.len();
        let scale = 1.0 / batch as f64;
        let softmax_grad = |logits: &Array2<f64>| -> (Array2<f64>, f64) {
            let mut d = logits.clone();
            let mut loss = 0.0;
            for (b, mut row) in d.rows_mut().into_iter().enumerate() {
                let dist = softmax(row.as_slice().expect("contiguous"));
                let label = labels[samples[b]];
                loss += -(dist.probs()[label] + LOSS_EPSILON).ln();
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (dist.probs()[c] - if c == label { 1.0 } else { 0.0 }) * scale;
                }
            }
            (d, loss * scale)
        };
        match model {
            Model::GamNet(p) => {
                let pre = x.dot(&p.w0);
                let hidden = relu(&pre);
                let pooled = self.pool_hidden(&hidden, batch);
                let (dlogits, loss) = softmax_grad(&pooled.dot(&p.w1));
                let dw1 = pooled.t().dot(&dlogits);
                let dpooled = dlogits.dot(&p.w1.t());
                let n = self.rows_per_sample;
                let mut dpre = Array2::zeros(pre.dim());
                for b in 0..batch {
                    for (k, &w) in self.pool.iter().enumerate() {
                        let r = b * n + k;
                        let mut row = dpre.row_mut(r);
                        row.scaled_add(w, &dpooled.row(b));
                        row.zip_mut_with(&pre.row(r), |d, &u| {
                            if u <= 0.0 {
                                *d = 0.0;
                            }
                        });
                    }
                }
                let dw0 = x.t().dot(&dpre);
                p.w0.scaled_add(-lr, &dw0);
                p.w1.scaled_add(-lr, &dw1);
                loss
            }
            Model::Mlp(p) => {
                let pre = x.dot(&p.w0) + &p.b0;
                let hidden = relu(&pre);
                let (dlogits, loss) = softmax_grad(&(hidden.dot(&p.w1) + &p.b1));
                let dw1 = hidden.t().dot(&dlogits);
                let db1 = dlogits.sum_axis(Axis(0));
                let mut dpre = dlogits.dot(&p.w1.t());
                dpre.zip_mut_with(&pre, |d, &u| {
                    if u <= 0.0 {
                        *d = 0.0;
                    }
                });
                let dw0 = x.t().dot(&dpre);
                let db0 = dpre.sum_axis(Axis(0));
                p.w0.scaled_add(-lr, &dw0);
                p.b0.scaled_add(-lr, &db0);
                p.w1.scaled_add(-lr, &dw1);
                p.b1.scaled_add(-lr, &db1);
                loss
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

pub fn train(ds: &WindowedDataset, a_hat: &NormalizedAdjacency, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_masked(ds, a_hat, cfg, None)
}

/// Trains on `diag(s)·X` for every sample. Each epoch reshuffles with a seed
/// derived from `(cfg.seed, epoch)` and applies `w ← w − lr·g` per batch,
/// `g` being the batch-mean gradient.
pub fn train_masked(
    ds: &WindowedDataset,
    a_hat: &NormalizedAdjacency,
    cfg: &TrainConfig,
    mask: Option<&SelectionVector>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prepared = Prepared::new(cfg.model_kind, ds, a_hat, mask)?;
    let mut model = Model::init(cfg.model_kind, cfg.shape_for(ds), derive_seed(cfg.seed, &[0x1417]))?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from(cfg.seed, &[0xE90C, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            total += prepared.step(&mut model, batch, &ds.labels, cfg.learning_rate) * batch.len() as f64;
        }
        let mean = total / ds.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { model, loss_curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_recall: Vec<f64>,
    pub sample_count: usize,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize, wall_time_s: f64) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                if total == 0 { 0.0 } else { row[c] as f64 / total as f64 }
            })
            .collect();
        let n = labels.len();
        Self {
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            confusion,
            per_class_recall,
            sample_count: n,
            wall_time_s,
        }
    }

    /// Confusion matrix as CSV: header `true\pred,<names>`, one row per class.
    pub fn confusion_csv(&self, label_names: &[String]) -> String {
        let name = |c: usize| label_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
        let classes = self.confusion.len();
        let mut out = String::from("true\\pred");
        for c in 0..classes {
            out.push(',');
            out.push_str(&name(c));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&name(t));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

const EVAL_CHUNK: usize = 256;

/// Argmax predictions (ties → lowest class id) for every sample.
pub fn predict(
    model: &Model,
    ds: &WindowedDataset,
    a_hat: &NormalizedAdjacency,
    mask: Option<&SelectionVector>,
    exec: Exec,
) -> Result<Vec<usize>> {
    check_model_fits(model, ds)?;
    let prepared = Prepared::new(model.kind(), ds, a_hat, mask)?;
    let chunks = ds.len().div_ceil(EVAL_CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let (start, end) = (c * EVAL_CHUNK, ((c + 1) * EVAL_CHUNK).min(ds.len()));
        let logits = prepared.logits(model, prepared.contiguous(start, end), end - start);
        logits
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("contiguous")))
            .collect::<Vec<_>>()
    });
    Ok(parts.into_iter().flatten().collect())
}

fn check_model_fits(model: &Model, ds: &WindowedDataset) -> Result<()> {
    let ok = match model {
        Model::GamNet(p) => p.w0.nrows() == ds.feature_len(),
        Model::Mlp(p) => p.w0.nrows() == ds.node_count() * ds.feature_len(),
    };
    if !ok || model.classes() != ds.class_count {
        return Err(Error::Shape(format!(
            "model does not fit a dataset of {} sensors x {} features with {} classes",
            ds.node_count(),
            ds.feature_len(),
            ds.class_count
        )));
    }
    Ok(())
}

pub fn evaluate(model: &Model, ds: &WindowedDataset, a_hat: &NormalizedAdjacency) -> Result<EvalReport> {
    evaluate_masked(model, ds, a_hat, None, Exec::default())
}

pub fn evaluate_masked(
    model: &Model,
    ds: &WindowedDataset,
    a_hat: &NormalizedAdjacency,
    mask: Option<&SelectionVector>,
    exec: Exec,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let predictions = predict(model, ds, a_hat, mask, exec)?;
    Ok(EvalReport::from_predictions(&ds.labels, &predictions, ds.class_count, started.elapsed().as_secs_f64()))
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    // Shifted by the first value so identical inputs give exactly zero spread.
    let n = values.len() as f64;
    let shift = values[0];
    let offset = values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / n;
    (shift + offset, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl CvReport {
    pub fn from_values(values: Vec<f64>) -> Self {
        let (mean, sd) = mean_sd(&values);
        Self { fold_accuracies: values, mean, sd }
    }
}

/// Stratified k-fold cross-validation. Fold `i` trains with seed
/// `derive(cfg.seed, i)` on every other fold and is scored on fold `i`.
pub fn cross_validate(ds: &WindowedDataset, a_hat: &NormalizedAdjacency, cfg: &TrainConfig, k: usize) -> Result<CvReport> {
    cross_validate_masked(ds, a_hat, cfg, k, None)
}

pub fn cross_validate_masked(
    ds: &WindowedDataset,
    a_hat: &NormalizedAdjacency,
    cfg: &TrainConfig,
    k: usize,
    mask: Option<&SelectionVector>,
) -> Result<CvReport> {
    cfg.validate()?;
    let plan = split_folds(ds, k, cfg.seed)?;
    let results = cfg.exec.map_range(k, |fold| -> Result<f64> {
        let (train_idx, test_idx) = plan.partition(fold);
        let fold_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[0xF01D, fold as u64]), exec: Exec::Sequential, ..cfg.clone() };
        let outcome = train_masked(&ds.subset(&train_idx), a_hat, &fold_cfg, mask)?;
        Ok(evaluate_masked(&outcome.model, &ds.subset(&test_idx), a_hat, mask, Exec::Sequential)?.accuracy)
    });
    let accuracies = results
        .into_iter()
        .enumerate()
        .map(|(fold, r)| r.map_err(|e| Error::Fold { fold, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::from_values(accuracies))
}

/// `runs` independent stratified holdout evaluations. Run `r` uses seed
/// `derive(cfg.seed, r)` for both the split and the initialisation.
pub fn repeated_holdout(
    ds: &WindowedDataset,
    a_hat: &NormalizedAdjacency,
    cfg: &TrainConfig,
    train_fraction: f64,
    runs: usize,
) -> Result<CvReport> {
    cfg.validate()?;
    let results = cfg.exec.map_range(runs, |r| -> Result<f64> {
        let seed = derive_seed(cfg.seed, &[0x8E9E, r as u64]);
        let (train_idx, test_idx) = holdout_indices(ds, train_fraction, seed)?;
        let run_cfg = TrainConfig { seed, exec: Exec::Sequential, ..cfg.clone() };
        let outcome = train(&ds.subset(&train_idx), a_hat, &run_cfg)?;
        Ok(evaluate_masked(&outcome.model, &ds.subset(&test_idx), a_hat, None, Exec::Sequential)?.accuracy)
    });
    Ok(CvReport::from_values(results.into_iter().collect::<Result<Vec<_>>>()?))
}
