//! Forward models: the two-layer graph-convolutional classifier
//! `softmax(pool(Â · relu(Â · X · W0) · W1))` and a flat feed-forward
//! baseline that ignores the sensor graph.
//!
//! The graph model produces one logit row per node; rows are mean-pooled
//! into a single graph-level logit vector before the softmax. Masked sensors
//! keep their rows, so the pooled shape does not depend on how many sensors
//! are selected.

use std::path::Path;

use ndarray::{Array, Array1, Array2, ArrayView2, Axis, Dimension};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::seed::rng_from;
use crate::selection::SelectionVector;

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    /// Most probable class; ties go to the lowest class id.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax: logits are shifted by their maximum first.
pub fn softmax(logits: &[f64]) -> ClassDistribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ClassDistribution { probs: exps.into_iter().map(|e| e / total).collect() }
}

/// Hadamard product of the feature block with the selection: rows of
/// unselected sensors become zero.
pub fn apply_selection_mask(x: ArrayView2<'_, f64>, s: &SelectionVector) -> Result<Array2<f64>> {
    s.ensure_len(x.nrows())?;
    let mut out = x.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        if !s.is_selected(i) {
            row.fill(0.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    GamNet,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::GamNet => "gamnet",
            ModelKind::Mlp => "mlp",
        })
    }
}

/// Dimensions of a classifier: N sensors, F features per sensor, hidden
/// width H, C classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub node_count: usize,
    pub feature_len: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelShape {
    fn validate(&self) -> Result<()> {
        if self.node_count == 0 || self.feature_len == 0 || self.hidden == 0 {
            return Err(Error::Shape(format!("degenerate model shape {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::Shape(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }
}

/// Weight blocks of the graph model: `w0` is F × H, `w1` is H × C. No biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamNetParams {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
}

impl GamNetParams {
    pub fn zeros(feature_len: usize, hidden: usize, classes: usize) -> Self {
        Self { w0: Array2::zeros((feature_len, hidden)), w1: Array2::zeros((hidden, classes)) }
    }

    pub fn hidden(&self) -> usize {
        self.w0.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w1.ncols()
    }

    pub(crate) fn check(&self, x: ArrayView2<'_, f64>, a_hat: &NormalizedAdjacency) -> Result<()> {
        let n = a_hat.node_count();
        if x.nrows() != n {
            return Err(Error::Shape(format!("features have {} rows, adjacency is {n}x{n}", x.nrows())));
        }
        if x.ncols() != self.w0.nrows() {
            return Err(Error::Shape(format!(
                "features have {} columns, W0 expects {}",
                x.ncols(),
                self.w0.nrows()
            )));
        }
        if self.w0.ncols() != self.w1.nrows() {
            return Err(Error::Shape(format!(
                "W0 is {}x{} but W1 is {}x{}",
                self.w0.nrows(),
                self.w0.ncols(),
                self.w1.nrows(),
                self.w1.ncols()
            )));
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.w0.iter().chain(self.w1.iter()).all(|v| v.is_finite())
    }
}

/// Node-level logits `Â · relu(Â · X · W0) · W1`, one row per sensor.
pub fn gamnet_node_logits(p: &GamNetParams, x: ArrayView2<'_, f64>, a_hat: &NormalizedAdjacency) -> Result<Array2<f64>> {
    p.check(x, a_hat)?;
    let a = a_hat.matrix();
    let hidden = relu(&a.dot(&x).dot(&p.w0));
    Ok(a.dot(&hidden).dot(&p.w1))
}

pub fn gamnet_forward(p: &GamNetParams, x: ArrayView2<'_, f64>, a_hat: &NormalizedAdjacency) -> Result<ClassDistribution> {
    let z = gamnet_node_logits(p, x, a_hat)?;
    let pooled = z.mean_axis(Axis(0)).expect("at least one node");
    Ok(softmax(pooled.as_slice().expect("contiguous")))
}

/// Weights of the flat baseline: `w0` is (N·F) × H, `w1` is H × C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w0: Array2<f64>,
    pub b0: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w0: Array2::zeros((inputs, hidden)),
            b0: Array1::zeros(hidden),
            w1: Array2::zeros((hidden, classes)),
            b1: Array1::zeros(classes),
        }
    }

    pub(crate) fn check_inputs(&self, len: usize) -> Result<()> {
        if len != self.w0.nrows() {
            return Err(Error::Shape(format!("input has {len} values, W0 expects {}", self.w0.nrows())));
        }
        if self.w0.ncols() != self.b0.len()
            || self.w0.ncols() != self.w1.nrows()
            || self.w1.ncols() != self.b1.len()
        {
            return Err(Error::Shape("inconsistent MLP weight shapes".into()));
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.w0.iter().chain(&self.b0).chain(&self.w1).chain(&self.b1).all(|v| v.is_finite())
    }
}

/// `softmax(W1ᵀ · relu(W0ᵀ · flatten(X) + b0) + b1)`, flattening row-major.
pub fn mlp_forward(p: &MlpParams, x: ArrayView2<'_, f64>) -> Result<ClassDistribution> {
    p.check_inputs(x.len())?;
    let flat = Array1::from_iter(x.iter().copied());
    let hidden = relu(&(flat.dot(&p.w0) + &p.b0));
    let logits = hidden.dot(&p.w1) + &p.b1;
    Ok(softmax(logits.as_slice().expect("contiguous")))
}

/// A trained or freshly initialised classifier of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    GamNet(GamNetParams),
    Mlp(MlpParams),
}

impl Model {
    /// Glorot-uniform weights in `[−b, b]`, `b = sqrt(6/(fan_in + fan_out))`
    /// per block; zero biases.
    pub fn init(kind: ModelKind, shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let ModelShape { node_count, feature_len, hidden, classes } = shape;
        Ok(match kind {
            ModelKind::GamNet => Model::GamNet(GamNetParams {
                w0: glorot(feature_len, hidden, seed, 0),
                w1: glorot(hidden, classes, seed, 1),
            }),
            ModelKind::Mlp => Model::Mlp(MlpParams {
                w0: glorot(node_count * feature_len, hidden, seed, 0),
                b0: Array1::zeros(hidden),
                w1: glorot(hidden, classes, seed, 1),
                b1: Array1::zeros(classes),
            }),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::GamNet(_) => ModelKind::GamNet,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Model::GamNet(p) => p.classes(),
            Model::Mlp(p) => p.w1.ncols(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Model::GamNet(p) => p.w0.len() + p.w1.len(),
            Model::Mlp(p) => p.w0.len() + p.b0.len() + p.w1.len() + p.b1.len(),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, a_hat: &NormalizedAdjacency) -> Result<ClassDistribution> {
        match self {
            Model::GamNet(p) => gamnet_forward(p, x, a_hat),
            Model::Mlp(p) => mlp_forward(p, x),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Model::GamNet(p) => p.is_finite(),
            Model::Mlp(p) => p.is_finite(),
        }
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot(fan_in: usize, fan_out: usize, seed: u64, block: u64) -> Array2<f64> {
    let b = glorot_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-b, b).expect("finite bound");
    let mut rng = rng_from(seed, &[0x1417, block]);
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng))
}

/// Saved model plus enough context to rebuild and audit it. Stored as JSON;
/// floats are written in shortest round-trip form and parse back bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub shape: ModelShape,
    pub seed: u64,
    pub model: Model,
    #[serde(default)]
    pub label_names: Vec<String>,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(model: Model, shape: ModelShape, seed: u64, label_names: Vec<String>) -> Self {
        Self { format_version: Self::FORMAT_VERSION, shape, seed, model, label_names }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.format_version != Self::FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", c.format_version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
