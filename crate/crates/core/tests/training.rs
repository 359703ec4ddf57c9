mod common;

use common::*;
use pcp_core::config::MapStrategy;
use pcp_core::data::ObservationSample;
use pcp_core::model::{Classifier, Modalities, ModelParams, Network, TrajectoryBaseline};
use pcp_core::training::*;
use pcp_tensor::Tensor;

fn opt(lr: f64) -> RmsPropConfig {
    RmsPropConfig {
        learning_rate: lr,
        decay: 0.9,
        epsilon: 1e-8,
    }
}

/// Random samples whose label is the sign of the first pedestrian feature
/// summed over the window.
fn separable(n: usize, seed: u64) -> Vec<ObservationSample> {
    let cfg = tiny(MapStrategy::Atrous);
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let mut s = random_sample(&cfg, &mut r, 0);
            let total: f64 = s.ped_motion.iter().map(|v| v[0]).sum();
            s.label = u8::from(total > 0.0);
            s.track_id = format!("s{i}");
            s
        })
        .collect()
}

#[test]
fn rmsprop_first_step_closed_form() {
    let mut r = rng(1);
    let c = opt(0.01);
    let g = random_vec(&mut r, 50);
    let mut theta = random_vec(&mut r, 50);
    let start = theta.clone();
    let mut v = vec![0.0; 50];
    rmsprop_update(&mut theta, &g, &mut v, c).unwrap();
    for i in 0..50 {
        let vi = 0.1 * g[i] * g[i];
        assert!((v[i] - vi).abs() <= 1e-15);
        let expected = start[i] - 0.01 * g[i] / (vi.sqrt() + 1e-8);
        assert!((theta[i] - expected).abs() <= 1e-12);
    }
}

#[test]
fn rmsprop_two_steps_match_oracle() {
    let mut r = rng(2);
    let c = opt(0.003);
    let (g1, g2) = (random_vec(&mut r, 20), random_vec(&mut r, 20));
    let mut theta = random_vec(&mut r, 20);
    let start = theta.clone();
    let mut v = vec![0.0; 20];
    rmsprop_update(&mut theta, &g1, &mut v, c).unwrap();
    rmsprop_update(&mut theta, &g2, &mut v, c).unwrap();
    for i in 0..20 {
        let v1 = 0.1 * g1[i] * g1[i];
        let v2 = 0.9 * v1 + 0.1 * g2[i] * g2[i];
        let t = start[i] - 0.003 * g1[i] / (v1.sqrt() + 1e-8) - 0.003 * g2[i] / (v2.sqrt() + 1e-8);
        assert!((theta[i] - t).abs() <= 1e-12);
        assert!((v[i] - v2).abs() <= 1e-15);
    }
    assert!(rmsprop_update(&mut theta, &g1[..3], &mut v, c).is_err());
}

#[test]
fn rmsprop_descends_a_convex_quadratic() {
    let target = [1.5, -2.0, 0.25, 4.0];
    let mut theta = vec![0.0; 4];
    let mut v = vec![0.0; 4];
    let f = |t: &[f64]| t.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut last = f(&theta);
    for _ in 0..2000 {
        let g: Vec<f64> = theta.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        rmsprop_update(&mut theta, &g, &mut v, opt(0.01)).unwrap();
        last = last.min(f(&theta));
    }
    assert!(f(&theta) < 1e-3, "{theta:?}");
    assert!(last < 1e-3);
}

#[test]
fn l2_hand_cases() {
    let mut p = ModelParams::new();
    p.insert("a", Tensor::vector(vec![3.0, 4.0]));
    p.insert("b", Tensor::vector(vec![10.0]));
    assert!((l2_penalty(&p, |n| n == "a", 0.1) - 2.5).abs() <= 1e-12);
    assert_eq!(l2_penalty(&p, |_| false, 0.1), 0.0);
    assert!((l2_penalty(&p, |_| true, 0.5) - 62.5).abs() <= 1e-12);

    let n = Network::new(tiny(MapStrategy::Atrous)).unwrap();
    let p = random_params(&n.param_specs(), &mut rng(3), 1.0);
    let flat: f64 = p
        .iter()
        .filter(|(name, _)| n.regularized(name))
        .flat_map(|(_, t)| t.data().iter().map(|v| v * v).collect::<Vec<_>>())
        .sum();
    assert!((l2_penalty(&p, |name| n.regularized(name), 1e-4) - 1e-4 * flat).abs() <= 1e-12);
}

#[test]
fn l2_adds_twice_coeff_theta_to_the_gradient() {
    let n = Network::new(tiny(MapStrategy::Atrous)).unwrap();
    let p = random_params(&n.param_specs(), &mut rng(4), 0.5);
    let data = separable(3, 5);
    let batch: Vec<&ObservationSample> = data.iter().collect();
    let coeff = 0.03;
    let (l0, _, g0) = batch_gradients(&n, &p, &batch, ClassWeights::UNIT, 0.0).unwrap();
    let (l1, _, g1) = batch_gradients(&n, &p, &batch, ClassWeights::UNIT, coeff).unwrap();
    let penalty = l2_penalty(&p, |name| n.regularized(name), coeff);
    assert!((l1 - l0 - penalty).abs() <= 1e-10);
    for (name, grad) in &g0.0 {
        let with = g1.get(name).unwrap();
        let theta = p.get(name).unwrap().data();
        for i in 0..grad.len() {
            let extra = if n.regularized(name) { 2.0 * coeff * theta[i] } else { 0.0 };
            assert!((with[i] - grad[i] - extra).abs() <= 1e-12, "{name}[{i}]");
        }
    }
}

#[test]
fn unit_weights_reduce_to_plain_cross_entropy() {
    let mut r = rng(6);
    for _ in 0..100 {
        let p: f64 = rand::Rng::gen_range(&mut r, 0.001..0.999);
        assert!((weighted_bce(p, 1, ClassWeights::UNIT).unwrap() + p.ln()).abs() <= 1e-15);
        assert!((weighted_bce(p, 0, ClassWeights::UNIT).unwrap() + (1.0 - p).ln()).abs() <= 1e-15);
        let w = ClassWeights { neg: 1.0, pos: 3.0 };
        assert!((weighted_bce(p, 1, w).unwrap() + 3.0 * p.ln()).abs() <= 1e-14);
    }
    assert!((weighted_bce(0.5, 0, ClassWeights::UNIT).unwrap() - 2f64.ln()).abs() <= 1e-12);
    assert!(weighted_bce(0.0, 1, ClassWeights::UNIT).unwrap().is_finite());
    assert!(weighted_bce(0.5, 2, ClassWeights::UNIT).is_err());
    let mean = batch_bce(&[0.2, 0.9], &[0, 1], ClassWeights::UNIT).unwrap();
    assert!((mean - (-(0.8f64.ln()) - 0.9f64.ln()) / 2.0).abs() <= 1e-15);
}

#[test]
fn class_weights_from_counts() {
    let mut labels = vec![0u8; 570];
    labels.extend(vec![1u8; 149]);
    let w = compute_class_weights(&labels).unwrap();
    assert_eq!(w.neg, 1.0);
    assert!((w.pos - 570.0 / 149.0).abs() <= 1e-9);
    assert!(compute_class_weights(&[1, 1]).is_err());
    assert!(compute_class_weights(&[]).is_err());
}

#[test]
fn empty_and_single_class_sets_are_rejected() {
    let n = Network::new(tiny(MapStrategy::Atrous)).unwrap();
    assert!(Trainer::new(&n, &[], TrainConfig::default()).is_err());
    let mut one_class = separable(8, 7);
    one_class.iter_mut().for_each(|s| s.label = 1);
    assert!(Trainer::new(&n, &one_class, TrainConfig::default()).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(Trainer::new(&n, &separable(8, 7), bad).is_err());
}

fn quick(lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        seed,
        batch_size: 8,
        ..Default::default()
    }
}

#[test]
fn first_epoch_lowers_the_loss() {
    let n = Network::new(tiny(MapStrategy::Sequential)).unwrap();
    let data = separable(48, 8);
    let mut t = Trainer::new(&n, &data, quick(3e-3, 1)).unwrap();
    let batch: Vec<&ObservationSample> = data.iter().collect();
    let w = t.class_weights();
    let before = batch_gradients(&n, t.params(), &batch, w, 0.0).unwrap().0;
    t.train_epoch(None).unwrap();
    let after = batch_gradients(&n, t.params(), &batch, w, 0.0).unwrap().0;
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn overfits_a_small_separable_set() {
    let n = Network::new(tiny(MapStrategy::Atrous)).unwrap();
    let data = separable(64, 9);
    let mut t = Trainer::new(&n, &data, quick(5e-3, 2)).unwrap();
    let mut acc = 0.0;
    for _ in 0..150 {
        t.train_epoch(None).unwrap();
        acc = evaluate(&n, t.params(), &data, 0.5).unwrap().1.accuracy;
        if acc >= 0.95 {
            break;
        }
    }
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn fixed_seed_runs_are_identical() {
    let n = Network::new(tiny(MapStrategy::Multiscale)).unwrap();
    let data = separable(20, 10);
    let cfg = TrainConfig {
        epochs: 2,
        ..quick(1e-3, 3)
    };
    let a = train(&n, &data, Some(&data), &cfg, |_| {}).unwrap();
    let b = train(&n, &data, Some(&data), &cfg, |_| {}).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    let c = train(&n, &data, None, &TrainConfig { seed: 4, ..cfg }, |_| {}).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn masked_branches_stay_frozen() {
    let scene_only: Modalities = "scene".parse().unwrap();
    let n = Network::new(tiny(MapStrategy::Atrous)).unwrap().with_modalities(scene_only);
    let data = separable(16, 11);
    let mut t = Trainer::new(&n, &data, quick(1e-2, 5)).unwrap();
    let start = t.params().clone();
    t.train_epoch(None).unwrap();
    for (name, tensor) in t.params().iter() {
        let moved = tensor != start.get(name).unwrap();
        if name.starts_with("map.") || name.contains("lstm") || name.starts_with("dam") {
            assert!(!moved, "{name} changed");
        }
        if name == "scene.conv1.weight" || name == "output.weight" {
            assert!(moved, "{name} did not change");
        }
    }
}

#[test]
fn select_best_returns_the_best_epoch() {
    let n = Network::new(tiny(MapStrategy::Atrous)).unwrap();
    let data = separable(24, 12);
    let cfg = TrainConfig {
        epochs: 4,
        select_best: true,
        ..quick(5e-3, 6)
    };
    let out = train(&n, &data, Some(&data), &cfg, |_| {}).unwrap();
    let best = out
        .log
        .iter()
        .map(|s| s.validation.as_ref().unwrap().auc)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = out.log[out.selected_epoch - 1].validation.as_ref().unwrap().auc;
    assert_eq!(chosen, best);
    assert!(out.log[0].log_line().starts_with("epoch=1 loss="));
}

#[test]
fn trajectory_baseline_learns_a_coordinate_rule() {
    let b = TrajectoryBaseline::new(2, 8).unwrap();
    let train_set = separable(96, 13);
    let held_out = separable(64, 14);
    let cfg = TrainConfig {
        epochs: 40,
        ..quick(1e-2, 7)
    };
    let out = train(&b, &train_set, None, &cfg, |_| {}).unwrap();
    let (_, report) = evaluate(&b, &out.params, &held_out, 0.5).unwrap();
    assert!(report.auc >= 0.8, "baseline auc {}", report.auc);
}
