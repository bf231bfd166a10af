//! Evaluation pipeline: recording probabilities, thresholding, segment
//! aggregation, and the combined report.

use ndarray::Array2;
use thiserror::Error;

use crate::dataset::Bag;
use crate::metrics::{
    apply_thresholds, ranking_metrics, segment_metrics, segment_probs, tagging_metrics, EvalReport,
    MetricsError, Thresholds,
};
use crate::model::{frame_forward, ModelError, ModelParams};
use crate::pooling::{pool_forward, BagActivation, PoolingSpec};
use crate::Real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How to turn frame probabilities into segment decisions.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub frames_per_segment: usize,
    /// Pooling used to aggregate frames within a segment; defaults to the
    /// same function the model was trained with.
    pub segment_pooling: Option<PoolingSpec>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { frames_per_segment: 10, segment_pooling: None }
    }
}

/// Stacks bag labels into a recordings x classes matrix.
pub fn bag_label_matrix(bags: &[Bag]) -> Array2<u8> {
    let classes = bags.first().map_or(0, Bag::classes);
    let mut labels = Array2::zeros((bags.len(), classes));
    for (r, bag) in bags.iter().enumerate() {
        for (c, &t) in bag.bag_labels.iter().enumerate() {
            labels[[r, c]] = t;
        }
    }
    labels
}

/// Pools each class's frame probabilities over the whole recording.
pub fn recording_probability(
    params: &ModelParams,
    bag: &Bag,
    spec: &PoolingSpec,
) -> Result<Vec<Real>, EvalError> {
    let (probs, weights) = frame_forward(params, bag)?;
    let mut out = Vec::with_capacity(params.classes);
    for class in 0..params.classes {
        let p: Vec<Real> = probs.column(class).iter().copied().collect();
        let act = if spec.uses_weights() {
            let w: Vec<Real> = weights.column(class).iter().copied().collect();
            BagActivation::with_weights(p, w)
        } else {
            BagActivation::new(p)
        };
        out.push(pool_forward(&act, spec).map_err(ModelError::from)?);
    }
    Ok(out)
}

/// Recording probabilities for a whole split, recordings x classes.
pub fn recording_probs(
    params: &ModelParams,
    bags: &[Bag],
    spec: &PoolingSpec,
) -> Result<Array2<Real>, EvalError> {
    let mut out = Array2::zeros((bags.len(), params.classes));
    for (r, bag) in bags.iter().enumerate() {
        for (c, y) in recording_probability(params, bag, spec)?.into_iter().enumerate() {
            out[[r, c]] = y;
        }
    }
    Ok(out)
}

/// Evaluates a trained model on a strongly labeled split: tagging metrics
/// from recording-level decisions, segment metrics from per-segment
/// decisions under the same class thresholds, and ranking metrics.
pub fn evaluate(
    params: &ModelParams,
    bags: &[Bag],
    spec: &PoolingSpec,
    thresholds: &Thresholds,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let labels = bag_label_matrix(bags);
    let rec_probs = recording_probs(params, bags, spec)?;
    let decisions = apply_thresholds(&rec_probs, thresholds);
    let tagging = tagging_metrics(&decisions, &labels);

    let segment_spec = options.segment_pooling.unwrap_or(*spec);
    let mut system = Vec::with_capacity(bags.len());
    let mut frame_truth = Vec::with_capacity(bags.len());
    for bag in bags {
        let truth = bag.frame_labels.as_ref().ok_or(MetricsError::StrongLabelsRequired)?;
        let (probs, weights) = frame_forward(params, bag)?;
        let seg_probs = segment_probs(&probs, Some(&weights), options.frames_per_segment, &segment_spec)?;
        system.push(apply_thresholds(&seg_probs, thresholds));
        frame_truth.push(truth.clone());
    }
    let segment = segment_metrics(&system, &frame_truth, options.frames_per_segment)?;

    let ranking = ranking_metrics(&rec_probs, &labels)?;
    Ok(EvalReport { tagging, segment, ranking })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tune_thresholds;
    use crate::synth::{generate, SynthConfig};
    use crate::train::{train, TrainConfig};

    #[test]
    fn evaluate_requires_strong_labels() {
        let config = SynthConfig {
            classes: 2,
            feature_dim: 3,
            frames: 20,
            train_recordings: 12,
            val_recordings: 4,
            test_recordings: 4,
            min_duration: 4,
            max_duration: 8,
            ..SynthConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let train_cfg = TrainConfig { epochs: 1, hidden_sizes: vec![4], ..TrainConfig::default() };
        let out = train(&corpus.train, &train_cfg).unwrap();
        let thresholds = Thresholds(vec![0.5, 0.5]);

        let mut unlabeled = corpus.test.clone();
        for bag in &mut unlabeled {
            bag.frame_labels = None;
        }
        let err = evaluate(&out.params, &unlabeled, &train_cfg.pooling, &thresholds, &EvalOptions::default())
            .unwrap_err();
        assert!(err.to_string().contains("strong labels required"), "{err}");
    }

    #[test]
    fn evaluate_produces_a_complete_report() {
        let config = SynthConfig {
            classes: 2,
            feature_dim: 3,
            frames: 30,
            train_recordings: 20,
            val_recordings: 8,
            test_recordings: 8,
            min_duration: 5,
            max_duration: 10,
            ..SynthConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let train_cfg = TrainConfig { epochs: 2, hidden_sizes: vec![4], ..TrainConfig::default() };
        let out = train(&corpus.train, &train_cfg).unwrap();
        let val_probs = recording_probs(&out.params, &corpus.validation, &train_cfg.pooling).unwrap();
        let thresholds = tune_thresholds(&val_probs, &bag_label_matrix(&corpus.validation));
        let report =
            evaluate(&out.params, &corpus.test, &train_cfg.pooling, &thresholds, &EvalOptions::default())
                .unwrap();
        let text = report.to_string();
        assert!(text.contains("Audio Tagging"));
        assert!(text.contains("Error Rate"));
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
