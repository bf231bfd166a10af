//! Oracle checks for the metric implementations: an independent set-based
//! scorer for segment metrics, pair counting for AUC, the classic
//! sort-and-average definition for AP, and an erf-based normal CDF for the
//! probit.

use std::collections::BTreeSet;

use milpool_core::metrics::{
    average_precision, probit, roc_auc, segment_metrics, SegmentCounts,
};
use milpool_core::Real;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Scores one corpus with explicit per-segment reference/system sets,
/// independently of the streaming implementation.
fn set_based_oracle(
    system: &[Array2<u8>],
    frame_labels: &[Array2<u8>],
    frames_per_segment: usize,
) -> SegmentCounts {
    let mut counts = SegmentCounts::default();
    for (decisions, labels) in system.iter().zip(frame_labels) {
        let segments = decisions.nrows();
        let classes = decisions.ncols();
        for seg in 0..segments {
            let mut reference: BTreeSet<usize> = BTreeSet::new();
            for class in 0..classes {
                let start = seg * frames_per_segment;
                let end = ((seg + 1) * frames_per_segment).min(labels.nrows());
                if (start..end).any(|f| labels[[f, class]] == 1) {
                    reference.insert(class);
                }
            }
            let sys: BTreeSet<usize> =
                (0..classes).filter(|&c| decisions[[seg, c]] == 1).collect();
            let fn_ = reference.difference(&sys).count() as u64;
            let fp = sys.difference(&reference).count() as u64;
            let tp = reference.intersection(&sys).count() as u64;
            let subs = fn_.min(fp);
            counts.reference_active += reference.len() as u64;
            counts.substitutions += subs;
            counts.deletions += fn_ - subs;
            counts.insertions += fp - subs;
            counts.true_positives += tp;
            counts.false_positives += fp;
            counts.false_negatives += fn_;
        }
    }
    counts
}

fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Array2<u8>>, Vec<Array2<u8>>, usize) {
    let recordings = rng.random_range(1..=20);
    let classes = rng.random_range(1..=5);
    let frames_per_segment = rng.random_range(1..=7);
    let mut system = Vec::with_capacity(recordings);
    let mut labels = Vec::with_capacity(recordings);
    for _ in 0..recordings {
        let segments = rng.random_range(1..=30);
        // Sometimes a partial final segment.
        let frames = segments * frames_per_segment - rng.random_range(0..frames_per_segment);
        labels.push(Array2::from_shape_fn((frames, classes), |_| u8::from(rng.random_bool(0.25))));
        system.push(Array2::from_shape_fn((segments, classes), |_| u8::from(rng.random_bool(0.3))));
    }
    (system, labels, frames_per_segment)
}

#[test]
fn segment_counts_match_the_set_based_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for trial in 0..50 {
        let (system, labels, frames_per_segment) = random_corpus(&mut rng);
        let metrics = segment_metrics(&system, &labels, frames_per_segment).unwrap();
        let oracle = set_based_oracle(&system, &labels, frames_per_segment);
        assert_eq!(metrics.counts, oracle, "trial {trial}");
    }
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let n = rng.random_range(2..=40);
        let scores: Vec<Real> = (0..n).map(|_| (rng.random_range(0..10) as Real) / 10.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let Some(auc) = roc_auc(&scores, &labels) else { continue };
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &ti) in labels.iter().enumerate() {
            if ti != 1 {
                continue;
            }
            for (j, &tj) in labels.iter().enumerate() {
                if tj == 1 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        assert!((auc - wins / pairs).abs() < 1e-12, "auc {auc} vs pairs {}", wins / pairs);
    }
}

#[test]
fn average_precision_matches_classic_sort_on_tie_free_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let scores: Vec<Real> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let Some(ap) = average_precision(&scores, &labels) else { continue };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let mut hits = 0.0;
        let mut classic = 0.0;
        for (rank0, &idx) in order.iter().enumerate() {
            if labels[idx] == 1 {
                hits += 1.0;
                classic += hits / (rank0 + 1) as Real;
            }
        }
        classic /= hits;
        assert!((ap - classic).abs() < 1e-12, "ap {ap} vs classic {classic}");
    }
}

#[test]
fn probit_inverts_an_erf_based_normal_cdf() {
    // Phi(x) = erfc(-x / sqrt(2)) / 2, evaluated independently via libm.
    let normal_cdf = |x: Real| 0.5 * libm::erfc(-x / Real::sqrt(2.0));
    let mut x = -4.0;
    let mut worst: Real = 0.0;
    while x <= 4.0 {
        let recovered = probit(normal_cdf(x));
        worst = worst.max((recovered - x).abs());
        x += 0.01;
    }
    assert!(worst <= 1e-6, "worst probit round-trip error {worst}");
}
