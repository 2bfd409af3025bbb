mod common;

use common::pairwise;
use longscan::eval::{examples_auc, macro_ovr_auc, recording_auc, roc_auc, ScoredExample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=12)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..6, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
        .prop_map(|(s, l)| (s.into_iter().map(|v| v as f64 / 5.0).collect(), l))
}

#[test]
fn documented_examples() {
    let pos = [true, true, false, false];
    assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &pos).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.9, 0.4, 0.6, 0.1], &pos).unwrap(), 0.75);
    assert_eq!(roc_auc(&[0.5; 4], &pos).unwrap(), 0.5);
    assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn macro_auc_is_the_mean_of_per_class_pairwise_aucs() {
    let probs = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.3, 0.4, 0.3],
        vec![0.2, 0.5, 0.3],
        vec![0.4, 0.3, 0.3],
        vec![0.1, 0.2, 0.7],
        vec![0.3, 0.3, 0.4],
    ];
    let labels = [0, 0, 1, 1, 2, 2];
    let want: f64 = (0..3)
        .map(|c| {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            pairwise(&s, &pos)
        })
        .sum::<f64>()
        / 3.0;
    assert!((macro_ovr_auc(&probs, &labels, 3).unwrap() - want).abs() < 1e-15);
    let uniform = vec![vec![1.0 / 3.0; 3]; 6];
    assert_eq!(macro_ovr_auc(&uniform, &labels, 3).unwrap(), 0.5);
    let onehot: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..3).map(|c| (c == l) as u8 as f64).collect())
        .collect();
    assert_eq!(macro_ovr_auc(&onehot, &labels, 3).unwrap(), 1.0);
    assert!(macro_ovr_auc(&uniform[..4], &labels[..4], 3).is_err());
}

#[test]
fn two_class_score_is_the_impaired_probability() {
    let ex = |id: &str, p1: f64, label| ScoredExample {
        recording_id: id.into(),
        probs: vec![1.0 - p1, p1],
        label,
    };
    let examples = [ex("a", 0.9, 1), ex("b", 0.2, 0), ex("c", 0.4, 1), ex("d", 0.6, 0)];
    assert_eq!(examples_auc(&examples).unwrap(), 0.75);
    let probs: Vec<Vec<f64>> = examples.iter().map(|e| e.probs.clone()).collect();
    assert_eq!(recording_auc(&probs, &[1, 0, 1, 0]).unwrap(), 0.75);
}

#[test]
fn strictly_monotone_transforms_preserve_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(-3.0f64..3.0) * 4.0).round() / 4.0)
            .collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        pos[0] = true;
        pos[1] = false;
        let base = roc_auc(&scores, &pos).unwrap();
        for f in [
            |x: f64| x.exp(),
            |x: f64| 3.0 * x - 7.0,
            |x: f64| x * x * x + x,
            |x: f64| 1.0 / (1.0 + (-x).exp()),
        ] {
            let t: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            assert!((roc_auc(&t, &pos).unwrap() - base).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn equals_pairwise_count((scores, pos) in labelled()) {
        prop_assert!((roc_auc(&scores, &pos).unwrap() - pairwise(&scores, &pos)).abs() < 1e-12);
    }

    #[test]
    fn negated_scores_are_complementary((scores, pos) in labelled()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc_auc(&scores, &pos).unwrap() + roc_auc(&neg, &pos).unwrap() - 1.0).abs() < 1e-12);
    }
}
