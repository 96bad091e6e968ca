use halluc_cli::metrics::{accuracy, average_precision, mean_average_precision, mean_per_class_accuracy, one_hot_targets};
use halluc_core::numkit::rng::stream_rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Precision at each positive's own score threshold, averaged. Valid for
/// distinct scores.
fn ap_by_thresholds(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| relevant[i]).collect();
    if positives.is_empty() {
        return None;
    }
    let sum: f64 = positives
        .iter()
        .map(|&i| {
            let above = |j: usize| scores[j] >= scores[i];
            let hits = positives.iter().filter(|&&j| above(j)).count();
            let retrieved = (0..scores.len()).filter(|&j| above(j)).count();
            hits as f64 / retrieved as f64
        })
        .sum();
    Some(sum / positives.len() as f64)
}

fn distinct_scores(n: usize) -> impl Strategy<Value = Vec<f64>> {
    Just((0..n).map(|i| i as f64 / n as f64).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn average_precision_matches_threshold_oracle(
        (scores, relevant) in (1usize..40).prop_flat_map(|n| (distinct_scores(n), prop::collection::vec(any::<bool>(), n)))
    ) {
        let got = average_precision(&scores, &relevant);
        let want = ap_by_thresholds(&scores, &relevant);
        prop_assert_eq!(got.is_some(), want.is_some());
        if let (Some(g), Some(w)) = (got, want) {
            prop_assert!((g - w).abs() < 1e-12, "{} vs {}", g, w);
            prop_assert!((0.0..=1.0).contains(&g));
        }
    }

    #[test]
    fn metrics_ignore_monotone_rescaling(
        seed in any::<u64>(),
        n in 2usize..60,
        classes in 2usize..6,
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let mut rng = stream_rng(seed, 0);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..classes).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let moved: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|x| scale * x + shift).collect()).collect();
        let targets = one_hot_targets(&labels, classes).unwrap();
        prop_assert_eq!(accuracy(&scores, &labels, classes).unwrap(), accuracy(&moved, &labels, classes).unwrap());
        prop_assert_eq!(
            mean_per_class_accuracy(&scores, &labels, classes).unwrap(),
            mean_per_class_accuracy(&moved, &labels, classes).unwrap()
        );
        let a = mean_average_precision(&scores, &targets, classes).unwrap();
        let b = mean_average_precision(&moved, &targets, classes).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn perfect_scores_give_unit_metrics(seed in any::<u64>(), n in 2usize..50, classes in 2usize..8) {
        let mut rng = stream_rng(seed, 1);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..classes).map(|c| if c == l { 1.0 } else { rng.gen_range(0.0..0.5) }).collect())
            .collect();
        let targets = one_hot_targets(&labels, classes).unwrap();
        prop_assert_eq!(accuracy(&scores, &labels, classes).unwrap(), 1.0);
        prop_assert_eq!(mean_per_class_accuracy(&scores, &labels, classes).unwrap(), 1.0);
        prop_assert_eq!(mean_average_precision(&scores, &targets, classes).unwrap(), 1.0);
    }
}

#[test]
fn random_scores_sit_at_chance() {
    let (classes, per_class) = (5, 2000);
    let n = classes * per_class;
    let mut rng = stream_rng(17, 0);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..classes).map(|_| rng.gen()).collect()).collect();
    let p = 1.0 / classes as f64;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    let acc = accuracy(&scores, &labels, classes).unwrap();
    assert!((acc - p).abs() < 4.0 * sd, "accuracy {acc}");
    let mpca = mean_per_class_accuracy(&scores, &labels, classes).unwrap();
    assert!((mpca - p).abs() < 4.0 * sd, "mean per-class accuracy {mpca}");
    // AP of a random ranking concentrates near the positive rate.
    let map = mean_average_precision(&scores, &one_hot_targets(&labels, classes).unwrap(), classes).unwrap();
    assert!((map - p).abs() < 0.02, "mAP {map}");
}

#[test]
fn three_clip_multilabel_staircase() {
    // Class 0 ranks clips c, a, b with a and c relevant: precisions 1/1, 2/2.
    // Class 1 ranks a, b, c with b and c relevant: precisions 1/2, 2/3.
    let scores = vec![vec![0.6, 0.9], vec![0.1, 0.5], vec![0.8, 0.2]];
    let targets = vec![vec![true, false], vec![false, true], vec![true, true]];
    let map = mean_average_precision(&scores, &targets, 2).unwrap();
    let want = (1.0 + (0.5 + 2.0 / 3.0) / 2.0) / 2.0;
    assert!((map - want).abs() < 1e-12, "{map} vs {want}");
}
