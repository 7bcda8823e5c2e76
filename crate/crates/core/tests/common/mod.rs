//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use fmg_spo::graph::{ArmbandTopology, NormalizedAdjacency};
use fmg_spo::models::{gamnet_forward, GamNetParams, Model, ModelKind, ModelShape};
use fmg_spo::seed::rng_from;
use fmg_spo::trainer::cross_entropy;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

pub const STEP: f64 = 1e-5;

pub fn random_topology(n: usize, seed: u64) -> ArmbandTopology {
    let mut rng = rng_from(seed, &[1]);
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|_| rng.random_bool(0.5))
        .collect();
    ArmbandTopology::custom(n, &edges).unwrap()
}

pub fn random_x(n: usize, f: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from(seed, &[2]);
    Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0))
}

pub fn gamnet_loss(p: &GamNetParams, x: ArrayView2<'_, f64>, a: &NormalizedAdjacency, label: usize) -> f64 {
    cross_entropy(&gamnet_forward(p, x, a).unwrap(), label).unwrap()
}

/// Central difference of `loss` with respect to every entry of `w`.
pub fn numeric_grad(w: &mut Array2<f64>, mut loss: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(w.dim());
    for idx in 0..w.len() {
        let (r, c) = (idx / w.ncols(), idx % w.ncols());
        let orig = w[[r, c]];
        w[[r, c]] = orig + STEP;
        let up = loss(w);
        w[[r, c]] = orig - STEP;
        let down = loss(w);
        w[[r, c]] = orig;
        g[[r, c]] = (up - down) / (2.0 * STEP);
    }
    g
}

/// Largest relative error over entries whose magnitude exceeds 1e-8.
pub fn max_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs().max(n.abs()) > 1e-8)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

pub fn gamnet_instance(seed: u64) -> (GamNetParams, Array2<f64>, NormalizedAdjacency, usize) {
    let shape = ModelShape { node_count: 4, feature_len: 8, hidden: 5, classes: 3 };
    let Model::GamNet(p) = Model::init(ModelKind::GamNet, shape, seed).unwrap() else { unreachable!() };
    let a = random_topology(4, seed).normalized_adjacency();
    (p, random_x(4, 8, seed), a, (seed % 3) as usize)
}
