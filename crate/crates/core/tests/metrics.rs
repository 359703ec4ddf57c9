mod common;

use common::*;
use pcp_core::metrics::*;
use proptest::prelude::*;
use rand::Rng;

fn random_set(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = r.gen_range(2..60);
    // coarse scores so that ties occur often
    let levels = r.gen_range(2..20);
    let mut labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..=1)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = (0..n).map(|_| f64::from(r.gen_range(0..levels)) / f64::from(levels)).collect();
    (scores, labels)
}

#[test]
fn auc_matches_pairwise_statistic() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let (s, y) = random_set(&mut r);
        assert!((auc(&s, &y).unwrap() - pairwise_auc(&s, &y)).abs() <= 1e-12);
    }
}

#[test]
fn auc_ignores_monotone_transforms() {
    let mut r = rng(2);
    for _ in 0..200 {
        let (s, y) = random_set(&mut r);
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        assert!((auc(&s, &y).unwrap() - auc(&t, &y).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn swapping_labels_complements_auc() {
    let mut r = rng(3);
    for _ in 0..200 {
        let (s, y) = random_set(&mut r);
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        assert!((auc(&s, &y).unwrap() + auc(&s, &flipped).unwrap() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn precision_and_f1_hand_cases() {
    // tp=2 fp=1 tn=2 fn=1
    let c = confusion(&[0.9, 0.8, 0.7, 0.2, 0.1, 0.4], &[1, 1, 0, 1, 0, 0], 0.5).unwrap();
    assert_eq!(c, Confusion { tp: 2, fp: 1, tn: 2, fn_: 1 });
    assert_eq!(c.precision(), Some(2.0 / 3.0));
    assert_eq!(c.recall(), Some(2.0 / 3.0));
    assert_eq!(c.f1(), Some(2.0 / 3.0));
    assert_eq!(c.accuracy(), Some(4.0 / 6.0));

    let c = confusion(&[0.6, 0.6, 0.4], &[1, 0, 1], 0.5).unwrap();
    assert_eq!(c.precision(), Some(0.5));
    assert_eq!(c.recall(), Some(0.5));
    assert_eq!(c.f1(), Some(0.5));

    // threshold ties count as positive
    let c = confusion(&[0.5], &[1], 0.5).unwrap();
    assert_eq!(c.tp, 1);

    let none = confusion(&[0.1, 0.2], &[0, 1], 0.5).unwrap();
    assert_eq!(none.precision(), None);
    let r = MetricsReport::evaluate(&[0.1, 0.2], &[0, 1], 0.5).unwrap();
    assert!(!r.precision_defined && r.precision.is_nan());
    assert!(r.auc_defined);
    assert_eq!(r.auc, 1.0);
}

#[test]
fn single_class_auc_is_flagged() {
    assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    let r = MetricsReport::evaluate(&[0.1, 0.7], &[1, 1], 0.5).unwrap();
    assert!(!r.auc_defined && r.auc.is_nan());
    assert!(r.to_kv().contains("auc=nan\n"));
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(confusion(&[], &[], 0.5).is_err());
    assert!(confusion(&[0.1], &[2], 0.5).is_err());
    assert!(confusion(&[f64::NAN], &[1], 0.5).is_err());
    assert!(confusion(&[0.1, 0.2], &[1], 0.5).is_err());
}

#[test]
fn report_renders_every_key_once() {
    let r = MetricsReport::evaluate(&[0.9, 0.3, 0.6, 0.2], &[1, 0, 0, 1], 0.5).unwrap();
    let kv = r.to_kv();
    let keys: Vec<&str> = kv.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, MetricsReport::KEYS);
    assert!(kv.contains("acc=0.5000\n"));
    assert!(r.to_string().starts_with("acc=0.5000 auc="));
}

proptest! {
    #[test]
    fn accuracy_is_mean_correctness(scores in prop::collection::vec(0.0f64..1.0, 1..50), seed in 0u64..1000, thr in 0.0f64..1.0) {
        let mut r = rng(seed);
        let labels: Vec<u8> = scores.iter().map(|_| r.gen_range(0..=1)).collect();
        let c = confusion(&scores, &labels, thr).unwrap();
        let correct = scores.iter().zip(&labels).filter(|(s, y)| u8::from(**s >= thr) == **y).count();
        prop_assert_eq!(c.total(), scores.len());
        prop_assert!((c.accuracy().unwrap() - correct as f64 / scores.len() as f64).abs() <= 1e-15);
    }

    #[test]
    fn auc_lies_in_the_unit_interval(scores in prop::collection::vec(-10.0f64..10.0, 2..40), seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut labels: Vec<u8> = scores.iter().map(|_| r.gen_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
