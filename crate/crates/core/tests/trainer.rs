use std::collections::HashSet;

use fmg_spo::graph::ArmbandTopology;
use fmg_spo::models::{ClassDistribution, GamNetParams, Model, ModelKind};
use fmg_spo::seed::rng_from;
use fmg_spo::trainer::{
    cross_entropy, cross_validate, evaluate, gamnet_gradients, mean_sd, repeated_holdout, train, train_masked,
    EvalReport, TrainConfig,
};
use fmg_spo::{assemble_dataset, split_folds, synth, Error, Exec, PipelineConfig, SelectionVector, SynthConfig, WindowedDataset};
use ndarray::{Array2, Array3};
use rand::Rng;

fn dist(p: &[f64]) -> ClassDistribution {
    fmg_spo::models::softmax(&p.iter().map(|v| v.ln()).collect::<Vec<_>>())
}

#[test]
fn cross_entropy_examples() {
    assert!(cross_entropy(&dist(&[1.0, 0.0]), 0).unwrap().abs() < 1e-11);
    let uniform = dist(&[0.25; 4]);
    for label in 0..4 {
        assert!((cross_entropy(&uniform, label).unwrap() - 4f64.ln()).abs() < 1e-10);
    }
    let worst = cross_entropy(&dist(&[0.0, 1.0]), 0).unwrap();
    assert!(worst.is_finite() && (worst - 1e12f64.ln()).abs() < 1e-9);
    assert!(matches!(cross_entropy(&uniform, 4), Err(Error::Label { label: 4, classes: 4 })));
}

#[test]
fn eval_report_examples() {
    let labels = [0, 0, 1, 1, 2, 2];
    let perfect = EvalReport::from_predictions(&labels, &labels, 3, 0.0);
    assert_eq!(perfect.accuracy, 1.0);
    assert_eq!(perfect.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);

    let constant = EvalReport::from_predictions(&labels, &[1; 6], 3, 0.0);
    assert!((constant.accuracy - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(constant.per_class_recall, vec![0.0, 1.0, 0.0]);

    let mut rng = rng_from(3, &[]);
    for _ in 0..50 {
        let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
        let preds: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
        let r = EvalReport::from_predictions(&labels, &preds, 4, 0.0);
        let trace: usize = (0..4).map(|c| r.confusion[c][c]).sum();
        let total: usize = r.confusion.iter().flatten().sum();
        assert_eq!(r.accuracy, trace as f64 / total as f64);
    }
    let csv = perfect.confusion_csv(&["a".into(), "b".into()]);
    assert_eq!(csv.lines().next(), Some("true\\pred,a,b,class2"));
}

#[test]
fn mean_sd_is_population() {
    let (m, sd) = mean_sd(&[1.0, 3.0]);
    assert_eq!((m, sd), (2.0, 1.0));
}

/// Two classes whose sensor rows are high on opposite halves of the
/// feature axis. The classes differ in shape, not scale, since a bias-free
/// network cannot separate inputs that are positive multiples of each other.
fn separable(n_per_class: usize, seed: u64) -> WindowedDataset {
    let mut rng = rng_from(seed, &[]);
    let (nodes, feats) = (3, 4);
    let mut x = Array3::zeros((2 * n_per_class, nodes, feats));
    let mut labels = Vec::new();
    for i in 0..2 * n_per_class {
        let label = i % 2;
        for ((_, f), v) in x.index_axis_mut(ndarray::Axis(0), i).indexed_iter_mut() {
            let high = (f < feats / 2) == (label == 0);
            *v = if high { 0.9 } else { 0.1 } + rng.random_range(-0.05..0.05);
        }
        labels.push(label);
    }
    WindowedDataset::from_parts(x, labels, 2).unwrap()
}

fn ring3() -> fmg_spo::graph::NormalizedAdjacency {
    ArmbandTopology::ring(3).unwrap().normalized_adjacency()
}

#[test]
fn learns_separable_classes() {
    let ds = separable(60, 1);
    for kind in [ModelKind::GamNet, ModelKind::Mlp] {
        let cfg = TrainConfig { epochs: 50, model_kind: kind, hidden_width: 8, ..Default::default() };
        let out = train(&ds, &ring3(), &cfg).unwrap();
        assert_eq!(out.loss_curve.len(), 50);
        let acc = evaluate(&out.model, &ds, &ring3()).unwrap().accuracy;
        assert!(acc >= 0.99, "{kind:?}: {acc}");
    }
}

#[test]
fn training_is_bit_identical_for_equal_inputs() {
    let ds = separable(40, 2);
    let cfg = TrainConfig { epochs: 5, hidden_width: 6, ..Default::default() };
    let a = train(&ds, &ring3(), &cfg).unwrap();
    let b = train(&ds, &ring3(), &TrainConfig { exec: Exec::Sequential, ..cfg.clone() }).unwrap();
    assert_eq!(a, b);
    let c = train(&ds, &ring3(), &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = separable(10, 0);
    for cfg in [
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { learning_rate: 0.0, ..Default::default() },
        TrainConfig { hidden_width: 0, ..Default::default() },
    ] {
        assert!(matches!(train(&ds, &ring3(), &cfg), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn overflowing_inputs_report_divergence() {
    let mut ds = separable(20, 0);
    ds.features *= 1e200;
    let cfg = TrainConfig { epochs: 5, model_kind: ModelKind::Mlp, ..Default::default() };
    assert!(matches!(train(&ds, &ring3(), &cfg), Err(Error::Divergence { .. })));
}

fn gam(m: &Model) -> &GamNetParams {
    match m {
        Model::GamNet(p) => p,
        Model::Mlp(_) => unreachable!(),
    }
}

/// One full-batch epoch at rates `a` and `2a` gives `w0 − a·g` and
/// `w0 − 2a·g`, which recovers both the initial weights and the batch
/// gradient `g`. It must equal the mean of per-sample gradients at `w0`.
#[test]
fn batched_step_matches_mean_of_per_sample_gradients() {
    let ds = separable(12, 4);
    let a_hat = ArmbandTopology::custom(3, &[(0, 1)]).unwrap().normalized_adjacency();
    let lr = 1e-3;
    for mask in [None, Some(SelectionVector::from_indices(3, &[0, 2]).unwrap())] {
        let cfg = TrainConfig { epochs: 1, batch_size: ds.len(), learning_rate: lr, hidden_width: 5, ..Default::default() };
        let m1 = train_masked(&ds, &a_hat, &cfg, mask.as_ref()).unwrap().model;
        let m2 = train_masked(&ds, &a_hat, &TrainConfig { learning_rate: 2.0 * lr, ..cfg }, mask.as_ref()).unwrap().model;
        let (p1, p2) = (gam(&m1), gam(&m2));
        let init = GamNetParams { w0: 2.0 * &p1.w0 - &p2.w0, w1: 2.0 * &p1.w1 - &p2.w1 };
        let (g0, g1) = ((&p1.w0 - &p2.w0) / lr, (&p1.w1 - &p2.w1) / lr);

        let mut e0 = Array2::<f64>::zeros(g0.dim());
        let mut e1 = Array2::<f64>::zeros(g1.dim());
        for i in 0..ds.len() {
            let x = match &mask {
                Some(s) => fmg_spo::models::apply_selection_mask(ds.sample(i), s).unwrap(),
                None => ds.sample(i).to_owned(),
            };
            let g = gamnet_gradients(&init, x.view(), &a_hat, ds.labels[i]).unwrap();
            e0 += &g.dw0;
            e1 += &g.dw1;
        }
        e0 /= ds.len() as f64;
        e1 /= ds.len() as f64;
        for (got, want) in g0.iter().zip(&e0).chain(g1.iter().zip(&e1)) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }
}

#[test]
fn evaluation_ignores_sample_order() {
    let ds = separable(30, 5);
    let cfg = TrainConfig { epochs: 3, hidden_width: 4, ..Default::default() };
    let model = train(&ds, &ring3(), &cfg).unwrap().model;
    let mut order: Vec<usize> = (0..ds.len()).rev().collect();
    order.rotate_left(7);
    let a = evaluate(&model, &ds, &ring3()).unwrap();
    let b = evaluate(&model, &ds.subset(&order), &ring3()).unwrap();
    assert_eq!((a.accuracy, a.confusion), (b.accuracy, b.confusion));
}

fn planted() -> (WindowedDataset, fmg_spo::graph::NormalizedAdjacency) {
    let cfg = SynthConfig::default();
    let pipe = PipelineConfig { stride_ms: 40.0, ..Default::default() };
    let ds = assemble_dataset(&synth::generate(&cfg).unwrap(), &pipe, None, Exec::default()).unwrap();
    (ds, ArmbandTopology::banded_rings(&synth::DEFAULT_BANDS).unwrap().normalized_adjacency())
}

#[test]
fn cross_validation_learns_planted_data() {
    let (ds, a_hat) = planted();
    let cfg = TrainConfig::default();
    let report = cross_validate(&ds, &a_hat, &cfg, 5).unwrap();
    assert_eq!(report.fold_accuracies.len(), 5);
    assert!(report.mean >= 0.95, "{report:?}");
    let again = cross_validate(&ds, &a_hat, &TrainConfig { exec: Exec::Sequential, ..cfg }, 5).unwrap();
    assert_eq!(report, again);
}

#[test]
fn fold_test_windows_never_appear_in_training() {
    let (ds, _) = planted();
    let plan = split_folds(&ds, 10, 3).unwrap();
    let key = |i: usize| (ds.provenance[i].recording, ds.provenance[i].start);
    for fold in 0..10 {
        let (train_idx, test_idx) = plan.partition(fold);
        assert_eq!(train_idx.len() + test_idx.len(), ds.len());
        let train_keys: HashSet<_> = train_idx.iter().map(|&i| key(i)).collect();
        assert!(test_idx.iter().all(|&i| !train_keys.contains(&key(i))), "fold {fold}");
    }
}

#[test]
fn repeated_holdout_reports_each_run() {
    let ds = separable(30, 6);
    let cfg = TrainConfig { epochs: 10, hidden_width: 4, ..Default::default() };
    let r = repeated_holdout(&ds, &ring3(), &cfg, 0.7, 5).unwrap();
    assert_eq!(r.fold_accuracies.len(), 5);
    assert_eq!(r, repeated_holdout(&ds, &ring3(), &cfg, 0.7, 5).unwrap());
}
