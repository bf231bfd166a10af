//! Tagging, localization, and ranking metrics with the thresholding and
//! segment-aggregation protocol.
//!
//! Recording-level probabilities are thresholded with class-specific
//! thresholds tuned on a validation set; the same thresholds are applied to
//! segment-level probabilities obtained by pooling the frames within each
//! segment. Localization is scored on segments with the substitution /
//! deletion / insertion decomposition of the error rate; note the error rate
//! is a ratio to the number of reference-active segments and can exceed 1.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pooling::{pool_forward, BagActivation, PoolError, PoolingSpec};
use crate::Real;

/// Errors from metric computation.
#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("strong labels required")]
    StrongLabelsRequired,
    #[error("no class has both a positive and a negative example")]
    NoRankableClasses,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frames per segment must be at least 1")]
    EmptySegment,
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// Per-class decision thresholds in `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds(pub Vec<Real>);

/// Binary decisions: probability at or above the class threshold.
pub fn apply_thresholds(probs: &Array2<Real>, thresholds: &Thresholds) -> Array2<u8> {
    let mut decisions = Array2::zeros(probs.raw_dim());
    for ((row, class), &p) in probs.indexed_iter() {
        decisions[[row, class]] = u8::from(p >= thresholds.0[class]);
    }
    decisions
}

fn binary_f1(tp: u64, fp: u64, fn_: u64) -> Real {
    if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as Real / (2 * tp + fp + fn_) as Real
    }
}

/// Per class, grid-searches thresholds `0.01, 0.02, ..., 0.99` for the one
/// maximizing that class's recording-level F1; ties take the lowest
/// threshold. A class with no positive recordings gets 0.99 (its F1 is 0
/// everywhere, so the grid is uninformative and rejection is maximized).
pub fn tune_thresholds(probs: &Array2<Real>, labels: &Array2<u8>) -> Thresholds {
    assert_eq!(probs.raw_dim(), labels.raw_dim(), "probs and labels must have the same shape");
    let classes = probs.ncols();
    let mut thresholds = Vec::with_capacity(classes);
    for class in 0..classes {
        let positives = labels.column(class).iter().filter(|&&t| t == 1).count();
        if positives == 0 {
            thresholds.push(0.99);
            continue;
        }
        let mut best = (0.01, -1.0);
        for k in 1..=99u32 {
            let threshold = k as Real / 100.0;
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&p, &t) in probs.column(class).iter().zip(labels.column(class)) {
                let d = p >= threshold;
                match (d, t == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let f1 = binary_f1(tp, fp, fn_);
            if f1 > best.1 {
                best = (threshold, f1);
            }
        }
        thresholds.push(best.0);
    }
    Thresholds(thresholds)
}

/// Micro-averaged tagging metrics, counts pooled over classes and recordings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggingMetrics {
    pub true_positives: u64,
    pub false_negatives: u64,
    pub false_positives: u64,
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
}

impl TaggingMetrics {
    pub fn from_counts(true_positives: u64, false_negatives: u64, false_positives: u64) -> Self {
        let precision = if true_positives + false_positives == 0 {
            0.0
        } else {
            true_positives as Real / (true_positives + false_positives) as Real
        };
        let recall = if true_positives + false_negatives == 0 {
            0.0
        } else {
            true_positives as Real / (true_positives + false_negatives) as Real
        };
        Self {
            true_positives,
            false_negatives,
            false_positives,
            precision,
            recall,
            f1: binary_f1(true_positives, false_positives, false_negatives),
        }
    }
}

/// Micro-average precision, recall, and F1 of binary tagging decisions.
pub fn tagging_metrics(decisions: &Array2<u8>, labels: &Array2<u8>) -> TaggingMetrics {
    assert_eq!(decisions.raw_dim(), labels.raw_dim(), "decisions and labels must have the same shape");
    let (mut tp, mut fn_, mut fp) = (0u64, 0u64, 0u64);
    for (&d, &t) in decisions.iter().zip(labels.iter()) {
        match (d == 1, t == 1) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (true, false) => fp += 1,
            (false, false) => {}
        }
    }
    TaggingMetrics::from_counts(tp, fn_, fp)
}

fn segment_count(frames: usize, frames_per_segment: usize) -> usize {
    frames.div_ceil(frames_per_segment)
}

/// Pools the frame probabilities within each segment into one probability
/// per segment and class. The last segment may be partial and is aggregated
/// over its actual frames. Attention pooling requires the frame weights.
pub fn segment_probs(
    frame_probs: &Array2<Real>,
    frame_weights: Option<&Array2<Real>>,
    frames_per_segment: usize,
    spec: &PoolingSpec,
) -> Result<Array2<Real>, MetricsError> {
    if frames_per_segment == 0 {
        return Err(MetricsError::EmptySegment);
    }
    let (frames, classes) = frame_probs.dim();
    let segments = segment_count(frames, frames_per_segment);
    let mut out = Array2::zeros((segments, classes));
    for seg in 0..segments {
        let start = seg * frames_per_segment;
        let end = (start + frames_per_segment).min(frames);
        for class in 0..classes {
            let probs: Vec<Real> = (start..end).map(|f| frame_probs[[f, class]]).collect();
            let act = if spec.uses_weights() {
                let weights = frame_weights.ok_or(PoolError::MissingWeights)?;
                let w: Vec<Real> = (start..end).map(|f| weights[[f, class]]).collect();
                BagActivation::with_weights(probs, w)
            } else {
                BagActivation::new(probs)
            };
            out[[seg, class]] = pool_forward(&act, spec)?;
        }
    }
    Ok(out)
}

/// Derives the reference segment activity from frame labels: a class is
/// active in a segment iff any of its frames is active.
pub fn reference_segments(
    frame_labels: &Array2<u8>,
    frames_per_segment: usize,
) -> Result<Array2<u8>, MetricsError> {
    if frames_per_segment == 0 {
        return Err(MetricsError::EmptySegment);
    }
    let (frames, classes) = frame_labels.dim();
    let segments = segment_count(frames, frames_per_segment);
    let mut out = Array2::zeros((segments, classes));
    for ((frame, class), &t) in frame_labels.indexed_iter() {
        if t == 1 {
            out[[frame / frames_per_segment, class]] = 1;
        }
    }
    Ok(out)
}

/// Corpus-wide segment counts. Per segment, substitutions pair up one missed
/// reference event with one spurious system event (`S = min(FN, FP)`);
/// deletions and insertions are the remainders.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub reference_active: u64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl SegmentCounts {
    /// Folds one segment's per-class decisions into the running counts.
    pub fn add_segment(&mut self, system: &[u8], reference: &[u8]) {
        debug_assert_eq!(system.len(), reference.len());
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&d, &t) in system.iter().zip(reference) {
            match (d == 1, t == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let subs = fn_.min(fp);
        self.reference_active += tp + fn_;
        self.substitutions += subs;
        self.deletions += fn_ - subs;
        self.insertions += fp - subs;
        self.true_positives += tp;
        self.false_positives += fp;
        self.false_negatives += fn_;
    }

    /// Micro-average error rate; a ratio, not a probability, and not clamped.
    pub fn error_rate(&self) -> Real {
        let errors = (self.substitutions + self.deletions + self.insertions) as Real;
        if self.reference_active == 0 {
            if errors == 0.0 {
                0.0
            } else {
                Real::INFINITY
            }
        } else {
            errors / self.reference_active as Real
        }
    }
}

/// Segment-based localization metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub counts: SegmentCounts,
    pub error_rate: Real,
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
}

impl SegmentMetrics {
    pub fn from_counts(counts: SegmentCounts) -> Self {
        let tagging = TaggingMetrics::from_counts(
            counts.true_positives,
            counts.false_negatives,
            counts.false_positives,
        );
        Self {
            error_rate: counts.error_rate(),
            precision: tagging.precision,
            recall: tagging.recall,
            f1: tagging.f1,
            counts,
        }
    }
}

/// Scores system segment decisions against frame-level ground truth over a
/// corpus. `system[r]` holds the decisions for recording `r` (segments x
/// classes); `frame_labels[r]` the frame truth (frames x classes).
pub fn segment_metrics(
    system: &[Array2<u8>],
    frame_labels: &[Array2<u8>],
    frames_per_segment: usize,
) -> Result<SegmentMetrics, MetricsError> {
    if system.len() != frame_labels.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} system recordings vs {} labeled recordings",
            system.len(),
            frame_labels.len()
        )));
    }
    let mut counts = SegmentCounts::default();
    for (decisions, labels) in system.iter().zip(frame_labels) {
        let reference = reference_segments(labels, frames_per_segment)?;
        if decisions.dim() != reference.dim() {
            return Err(MetricsError::ShapeMismatch(format!(
                "system {:?} vs reference {:?}",
                decisions.dim(),
                reference.dim()
            )));
        }
        for seg in 0..reference.nrows() {
            counts.add_segment(
                decisions.row(seg).as_slice().expect("row-major"),
                reference.row(seg).as_slice().expect("row-major"),
            );
        }
    }
    Ok(SegmentMetrics::from_counts(counts))
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9). Returns signed infinity at 0 and 1.
pub fn probit(p: Real) -> Real {
    debug_assert!((0.0..=1.0).contains(&p), "probit domain is [0,1], got {p}");
    const A: [Real; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [Real; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [Real; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [Real; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: Real = 0.02425;

    if p <= 0.0 {
        return Real::NEG_INFINITY;
    }
    if p >= 1.0 {
        return Real::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}

/// d-prime from an area under the ROC curve: `sqrt(2) * probit(auc)`.
/// Signed infinity at 0 and 1 rather than an error.
pub fn d_prime(auc: Real) -> Real {
    Real::sqrt(2.0) * probit(auc)
}

/// Ascending 1-based ranks with ties assigned their average rank.
fn average_ranks(scores: &[Real]) -> Vec<Real> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j + 1) as Real / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// ROC AUC via the rank-sum (Mann-Whitney) statistic with average ranks.
/// Requires at least one positive and one negative.
pub fn roc_auc(scores: &[Real], labels: &[u8]) -> Option<Real> {
    let positives = labels.iter().filter(|&&t| t == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let positive_rank_sum: Real = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &t)| t == 1)
        .map(|(&r, _)| r)
        .sum();
    let p = positives as Real;
    let n = negatives as Real;
    Some((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Rank-based average precision with ties handled by average rank: each
/// positive contributes the precision at its average rank, counting tied
/// items (and tied positives) half. Without ties this is the classic
/// precision-at-each-positive average. Requires at least one positive and
/// one negative.
pub fn average_precision(scores: &[Real], labels: &[u8]) -> Option<Real> {
    let positives = labels.iter().filter(|&&t| t == 1).count();
    if positives == 0 || positives == labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut sum = 0.0;
    let mut above_all = 0usize;
    let mut above_pos = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..=j];
        let group_pos = group.iter().filter(|&&idx| labels[idx] == 1).count();
        if group_pos > 0 {
            let tied_all = (group.len() - 1) as Real;
            let tied_pos = (group_pos - 1) as Real;
            let precision = (above_pos as Real + 1.0 + tied_pos / 2.0)
                / (above_all as Real + 1.0 + tied_all / 2.0);
            sum += precision * group_pos as Real;
        }
        above_all += group.len();
        above_pos += group_pos;
        i = j + 1;
    }
    Some(sum / positives as Real)
}

/// Macro-averaged ranking metrics over the classes that have at least one
/// positive and one negative; the rest are listed in `skipped_classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub map: Real,
    pub mauc: Real,
    #[serde(with = "float_maybe_inf")]
    pub d_prime: Real,
    pub skipped_classes: Vec<usize>,
}

/// MAP, MAUC, and d-prime of recording-level probabilities against bag
/// labels. Errors if no class is rankable.
pub fn ranking_metrics(probs: &Array2<Real>, labels: &Array2<u8>) -> Result<RankingMetrics, MetricsError> {
    if probs.raw_dim() != labels.raw_dim() {
        return Err(MetricsError::ShapeMismatch(format!(
            "probs {:?} vs labels {:?}",
            probs.dim(),
            labels.dim()
        )));
    }
    let mut ap_sum = 0.0;
    let mut auc_sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped_classes = Vec::new();
    for class in 0..probs.ncols() {
        let scores: Vec<Real> = probs.column(class).iter().copied().collect();
        let truth: Vec<u8> = labels.column(class).iter().copied().collect();
        match (average_precision(&scores, &truth), roc_auc(&scores, &truth)) {
            (Some(ap), Some(auc)) => {
                ap_sum += ap;
                auc_sum += auc;
                evaluated += 1;
            }
            _ => skipped_classes.push(class),
        }
    }
    if evaluated == 0 {
        return Err(MetricsError::NoRankableClasses);
    }
    let map = ap_sum / evaluated as Real;
    let mauc = auc_sum / evaluated as Real;
    Ok(RankingMetrics { map, mauc, d_prime: d_prime(mauc), skipped_classes })
}

/// Full evaluation of one system: tagging, localization, ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tagging: TaggingMetrics,
    pub segment: SegmentMetrics,
    pub ranking: RankingMetrics,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let pct = |x: Real| 100.0 * x;
        writeln!(f, "Audio Tagging")?;
        writeln!(
            f,
            "  TP {}  FN {}  FP {}",
            self.tagging.true_positives, self.tagging.false_negatives, self.tagging.false_positives
        )?;
        writeln!(
            f,
            "  Precision {:.1}  Recall {:.1}  F1 {:.1}",
            pct(self.tagging.precision),
            pct(self.tagging.recall),
            pct(self.tagging.f1)
        )?;
        writeln!(f, "Localization")?;
        writeln!(
            f,
            "  TP {}  FN {}  FP {}",
            self.segment.counts.true_positives,
            self.segment.counts.false_negatives,
            self.segment.counts.false_positives
        )?;
        writeln!(
            f,
            "  Precision {:.1}  Recall {:.1}  F1 {:.1}",
            pct(self.segment.precision),
            pct(self.segment.recall),
            pct(self.segment.f1)
        )?;
        writeln!(
            f,
            "  Sub {}  Del {}  Ins {}  Error Rate {:.1}",
            self.segment.counts.substitutions,
            self.segment.counts.deletions,
            self.segment.counts.insertions,
            pct(self.segment.error_rate)
        )?;
        writeln!(f, "Ranking")?;
        write!(
            f,
            "  MAP {:.3}  MAUC {:.3}  d' {:.3}",
            self.ranking.map, self.ranking.mauc, self.ranking.d_prime
        )
    }
}

/// Serde adapter storing non-finite floats as the strings "inf" / "-inf"
/// (plain JSON has no representation for them).
mod float_maybe_inf {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            serializer.serialize_f64(*value)
        } else if *value > 0.0 {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_str("-inf")
        }
    }

    struct FloatOrInf;

    impl Visitor<'_> for FloatOrInf {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a float or \"inf\"/\"-inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("unexpected float string {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        deserializer.deserialize_any(FloatOrInf)
    }
}
