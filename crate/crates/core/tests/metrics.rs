mod common;

use common::checks::metric_oracles;
use common::{pairwise_auc, rng};
use m3col::eval::{auc_binary, error_crosstab, f1_scores, MetricsReport};
use m3col::{Error, Matrix};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn f1_and_auc_match_reference() {
    let e = metric_oracles(300, 21);
    assert!(e.f1 < 1e-12 && e.auc < 1e-12, "{e:?}");
}

#[test]
fn weighted_equals_macro_for_balanced_supports() {
    let mut r = rng(5);
    for _ in 0..50 {
        let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let pred: Vec<usize> = (0..30).map(|_| r.random_range(0..3)).collect();
        let s = f1_scores(&pred, &truth, 3).unwrap();
        assert!((s.weighted_f1 - s.macro_f1).abs() < 1e-12);
    }
}

#[test]
fn auc_of_single_class_is_undefined() {
    assert!(matches!(auc_binary(&[0.1, 0.7], &[1, 1]), Err(Error::UndefinedAuc(_))));
}

#[test]
fn report_reads_positive_class_probability() {
    let probs = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]).unwrap();
    let truth = [0, 1, 1, 0];
    let r = MetricsReport::from_probabilities(&probs, &truth).unwrap();
    assert_eq!(r.acc, 0.5);
    assert_eq!(r.auc, Some(pairwise_auc(&[0.1, 0.8, 0.4, 0.7], &truth)));
    assert_eq!(r.f1_binary, Some(0.5));
}

#[test]
fn crosstab_cells_sum_to_whole() {
    let truth = [0, 1, 2, 1, 0, 2, 2];
    let a = vec![0, 1, 1, 1, 2, 2, 0];
    let b = vec![1, 1, 2, 0, 0, 2, 2];
    let fused = [0, 0, 2, 1, 0, 1, 2];
    let t = error_crosstab(&[a, b], &fused, &truth).unwrap();
    assert!((t.total_percent() - 100.0).abs() < 1e-12);
    let count: usize = t.counts.iter().flatten().flatten().sum();
    assert_eq!(count, truth.len());
    assert!(matches!(error_crosstab(&[vec![0; 7]], &fused, &truth), Err(Error::ModalityCount(1))));
}

proptest! {
    #[test]
    fn auc_ignores_monotone_transforms(scores in prop::collection::vec(-5.0f64..5.0, 4..40), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut truth: Vec<usize> = scores.iter().map(|_| r.random_range(0..2)).collect();
        truth[0] = 0;
        truth[1] = 1;
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 2.0).collect();
        let base = auc_binary(&scores, &truth).unwrap();
        prop_assert!((auc_binary(&squashed, &truth).unwrap() - base).abs() < 1e-12);
        prop_assert!((auc_binary(&cubed, &truth).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc_binary(&flipped, &truth).unwrap() - (1.0 - base)).abs() < 1e-12);
    }
}
