use dsrc_traffic::metrics::{pearson, regression_metrics, roc_auc, roc_curve, trapezoid_area};
use dsrc_traffic::scene::Label;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
fn pair_count_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if li.is_positive() && !lj.is_positive() {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Label>) {
    let n = rng.gen_range(2..=12);
    // a small score alphabet forces ties
    let levels = rng.gen_range(1..=6);
    let scores = (0..n).map(|_| rng.gen_range(0..levels) as f64 / 4.0).collect();
    let labels = (0..n)
        .map(|_| if rng.gen() { Label::Heavy } else { Label::Light })
        .collect();
    (scores, labels)
}

fn has_both(labels: &[Label]) -> bool {
    labels.iter().any(|l| l.is_positive()) && labels.iter().any(|l| !l.is_positive())
}

#[test]
fn rank_auc_equals_exhaustive_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 1000 {
        let (scores, labels) = random_case(&mut rng);
        if !has_both(&labels) {
            assert!(roc_auc(&scores, &labels).is_err());
            continue;
        }
        assert_eq!(roc_auc(&scores, &labels).unwrap(), pair_count_auc(&scores, &labels));
        checked += 1;
    }
}

#[test]
fn trapezoid_area_agrees_with_rank_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(2..=60);
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64).sqrt()).collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.gen() { Label::Heavy } else { Label::Light })
            .collect();
        if !has_both(&labels) {
            continue;
        }
        let curve = roc_curve(&scores, &labels).unwrap();
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        let a = trapezoid_area(&curve);
        let b = roc_auc(&scores, &labels).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        checked += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_ignores_increasing_transforms(
        pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<Label> = pairs.iter().map(|p| if p.1 { Label::Heavy } else { Label::Light }).collect();
        prop_assume!(has_both(&labels));
        let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&warped, &labels).unwrap());
    }

    #[test]
    fn regression_errors_ignore_pair_order(
        pairs in prop::collection::vec((0.0f64..30.0, 0.0f64..30.0), 1..50),
        seed in any::<u64>(),
    ) {
        let (actual, estimated): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let m = regression_metrics(&actual, &estimated).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a2, e2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let s = regression_metrics(&a2, &e2).unwrap();
        prop_assert!((m.mae - s.mae).abs() <= 1e-12 * (1.0 + m.mae));
        let mean = actual.iter().sum::<f64>() / actual.len() as f64;
        if mean != 0.0 {
            prop_assert_eq!(m.wmape, Some(m.mae / mean));
        } else {
            prop_assert_eq!(m.wmape, None);
        }
    }

    #[test]
    fn correlation_is_affine_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        scale in 0.1f64..10.0,
        offset in -5.0f64..5.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let Some(r) = pearson(&x, &y) else { return Ok(()); };
        let pos: Vec<f64> = x.iter().map(|v| v * scale + offset).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v * scale + offset).collect();
        prop_assert!((pearson(&pos, &y).unwrap() - r).abs() < 1e-9);
        prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
    }
}
