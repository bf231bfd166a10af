//! Pooling functions mapping frame-level probabilities to one recording-level
//! probability, with exact analytic gradients.
//!
//! Every pooling function here is a weighted average of the frame
//! probabilities `y_i` (max pooling being the degenerate case that puts all
//! weight on the largest frame), so the recording probability always lies in
//! `[min(y_i), max(y_i)]`. The gradients are what the trainer backpropagates
//! through; [`finite_diff_check`] validates them against central differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Sums of frame probabilities below this are treated as an all-zero bag by
/// the linear-softmax and generalized quotients (their 0/0 limit is 0).
const ZERO_BAG_EPS: f64 = 1e-12;

/// Frame probabilities are clamped to at least this inside the generalized
/// weighting term, keeping `y^beta` differentiable at 0 for `0 < beta < 1`.
const WEIGHT_TERM_FLOOR: f64 = 1e-7;

/// Errors from pooling operations.
#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("empty bag")]
    EmptyBag,
    #[error("missing weights")]
    MissingWeights,
    #[error("weights length {weights} does not match probs length {probs}")]
    LengthMismatch { probs: usize, weights: usize },
    #[error("probability out of [0,1] at frame {index}: {value}")]
    ProbOutOfRange { index: usize, value: f64 },
    #[error("non-positive weight at frame {index}: {value}")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("beta must be non-negative, got {0}")]
    NegativeBeta(f64),
}

/// Per-frame probabilities (and, for attention, per-frame weights) of one
/// event class over one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct BagActivation<T: Scalar> {
    /// Frame probabilities `y_i`, each in `[0, 1]`.
    pub probs: Vec<T>,
    /// Positive attention weights `w_i`; only consulted by attention pooling.
    pub weights: Option<Vec<T>>,
}

impl<T: Scalar> BagActivation<T> {
    pub fn new(probs: Vec<T>) -> Self {
        Self { probs, weights: None }
    }

    pub fn with_weights(probs: Vec<T>, weights: Vec<T>) -> Self {
        Self { probs, weights: Some(weights) }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Checks the full type invariants: non-empty, probabilities in `[0,1]`,
    /// and weights (when present) positive and of matching length.
    pub fn validate(&self) -> Result<(), PoolError> {
        if self.probs.is_empty() {
            return Err(PoolError::EmptyBag);
        }
        for (index, &p) in self.probs.iter().enumerate() {
            if !(p >= T::zero() && p <= T::one()) {
                return Err(PoolError::ProbOutOfRange { index, value: p.to_f64().unwrap_or(f64::NAN) });
            }
        }
        if let Some(weights) = &self.weights {
            if weights.len() != self.probs.len() {
                return Err(PoolError::LengthMismatch { probs: self.probs.len(), weights: weights.len() });
            }
            for (index, &w) in weights.iter().enumerate() {
                if !(w > T::zero()) {
                    return Err(PoolError::NonPositiveWeight { index, value: w.to_f64().unwrap_or(f64::NAN) });
                }
            }
        }
        Ok(())
    }
}

/// Which pooling function to apply, with parameters for the generalized
/// weighting family `v_i = y_i^beta * exp(alpha * y_i)`.
///
/// The generalized family subsumes three of the fixed kinds: `(alpha=0,
/// beta=1)` is linear softmax, `(alpha=1, beta=0)` is exponential softmax,
/// and `(alpha=0, beta=0)` is average pooling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PoolingSpec {
    Max,
    Average,
    LinearSoftmax,
    ExpSoftmax,
    Attention,
    Generalized { alpha: f64, beta: f64 },
}

impl PoolingSpec {
    /// The five named pooling functions, in comparison-table column order.
    pub const FIVE: [PoolingSpec; 5] = [
        PoolingSpec::Max,
        PoolingSpec::Average,
        PoolingSpec::LinearSoftmax,
        PoolingSpec::ExpSoftmax,
        PoolingSpec::Attention,
    ];

    pub fn generalized(alpha: f64, beta: f64) -> Result<Self, PoolError> {
        if beta < 0.0 {
            return Err(PoolError::NegativeBeta(beta));
        }
        Ok(PoolingSpec::Generalized { alpha, beta })
    }

    /// Attention is the only kind that consumes per-frame weights.
    pub fn uses_weights(&self) -> bool {
        matches!(self, PoolingSpec::Attention)
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        match self {
            PoolingSpec::Generalized { beta, .. } if *beta < 0.0 => Err(PoolError::NegativeBeta(*beta)),
            _ => Ok(()),
        }
    }

    /// Stable identifier used in flags and file names.
    pub fn label(&self) -> &'static str {
        match self {
            PoolingSpec::Max => "max",
            PoolingSpec::Average => "average",
            PoolingSpec::LinearSoftmax => "linear-softmax",
            PoolingSpec::ExpSoftmax => "exp-softmax",
            PoolingSpec::Attention => "attention",
            PoolingSpec::Generalized { .. } => "generalized",
        }
    }

    /// Column heading used in comparison tables.
    pub fn column_name(&self) -> &'static str {
        match self {
            PoolingSpec::Max => "Max",
            PoolingSpec::Average => "Average",
            PoolingSpec::LinearSoftmax => "LinearSoftmax",
            PoolingSpec::ExpSoftmax => "ExpSoftmax",
            PoolingSpec::Attention => "Attention",
            PoolingSpec::Generalized { .. } => "Generalized",
        }
    }
}

impl std::fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolingSpec::Generalized { alpha, beta } => {
                write!(f, "generalized(alpha={alpha}, beta={beta})")
            }
            other => f.write_str(other.label()),
        }
    }
}

/// Gradient of the recording probability with respect to the bag activation.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolGradient<T: Scalar> {
    /// `dy/dy_i` per frame.
    pub d_probs: Vec<T>,
    /// `dy/dw_i` per frame; present for attention only.
    pub d_weights: Option<Vec<T>>,
}

impl<T: Scalar> PoolGradient<T> {
    /// True when every entry (probs and weights) is finite.
    pub fn is_finite(&self) -> bool {
        let probs_ok = self.d_probs.iter().all(|g| g.is_finite());
        let weights_ok = self
            .d_weights
            .as_ref()
            .map_or(true, |w| w.iter().all(|g| g.is_finite()));
        probs_ok && weights_ok
    }
}

fn guard<T: Scalar>(act: &BagActivation<T>, spec: &PoolingSpec) -> Result<(), PoolError> {
    spec.validate()?;
    if act.probs.is_empty() {
        return Err(PoolError::EmptyBag);
    }
    if spec.uses_weights() {
        match &act.weights {
            None => return Err(PoolError::MissingWeights),
            Some(w) if w.len() != act.probs.len() => {
                return Err(PoolError::LengthMismatch { probs: act.probs.len(), weights: w.len() })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn clamp_to_range<T: Scalar>(y: T, probs: &[T]) -> T {
    // Weighted averages can overshoot the frame range by a rounding ulp;
    // the contract y in [min, max] is kept exact.
    let mut lo = probs[0];
    let mut hi = probs[0];
    for &p in &probs[1..] {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    y.max(lo).min(hi)
}

/// Generalized weighting term `v_i` and its derivative, evaluated stably.
///
/// Weights are rescaled by `exp(-max_i alpha*y_i)`; the quotient and its
/// gradient are invariant under a common positive rescaling.
fn generalized_terms<T: Scalar>(probs: &[T], alpha: f64, beta: f64) -> (Vec<T>, Vec<T>) {
    let alpha = T::lit(alpha);
    let beta = T::lit(beta);
    let floor = T::lit(WEIGHT_TERM_FLOOR);
    let clamp_active = beta > T::zero() && beta < T::one();
    let clamped = |y: T| if clamp_active { y.max(floor) } else { y };

    let mut scale = T::neg_infinity();
    for &y in probs {
        scale = scale.max(alpha * clamped(y));
    }

    let mut values = Vec::with_capacity(probs.len());
    let mut derivs = Vec::with_capacity(probs.len());
    for &y in probs {
        let yc = clamped(y);
        let expo = (alpha * yc - scale).exp();
        let v = yc.powf(beta) * expo;
        let dv = if beta == T::zero() {
            alpha * v
        } else if clamp_active && y < floor {
            // Below the floor the weighting term is constant in y_i.
            T::zero()
        } else {
            (beta * yc.powf(beta - T::one()) + alpha * yc.powf(beta)) * expo
        };
        values.push(v);
        derivs.push(dv);
    }
    (values, derivs)
}

/// Aggregates frame probabilities into a recording probability.
///
/// Deterministic, permutation-invariant (weights co-permuted), and bounded by
/// the frame range.
pub fn pool_forward<T: Scalar>(act: &BagActivation<T>, spec: &PoolingSpec) -> Result<T, PoolError> {
    guard(act, spec)?;
    let probs = &act.probs;
    let n = probs.len();
    let y = match spec {
        PoolingSpec::Max => probs.iter().copied().fold(probs[0], T::max),
        PoolingSpec::Average => {
            let sum: T = probs.iter().copied().sum();
            clamp_to_range(sum / T::lit(n as f64), probs)
        }
        PoolingSpec::LinearSoftmax => {
            let den: T = probs.iter().copied().sum();
            if den < T::lit(ZERO_BAG_EPS) {
                T::zero()
            } else {
                let num: T = probs.iter().map(|&y| y * y).sum();
                clamp_to_range(num / den, probs)
            }
        }
        PoolingSpec::ExpSoftmax => {
            let m = probs.iter().copied().fold(probs[0], T::max);
            let num: T = probs.iter().map(|&y| y * (y - m).exp()).sum();
            let den: T = probs.iter().map(|&y| (y - m).exp()).sum();
            clamp_to_range(num / den, probs)
        }
        PoolingSpec::Attention => {
            let weights = act.weights.as_ref().expect("guard checked weights");
            let num: T = probs.iter().zip(weights).map(|(&y, &w)| y * w).sum();
            let den: T = weights.iter().copied().sum();
            clamp_to_range(num / den, probs)
        }
        PoolingSpec::Generalized { alpha, beta } => {
            let (values, _) = generalized_terms(probs, *alpha, *beta);
            let den: T = values.iter().copied().sum();
            if den < T::lit(ZERO_BAG_EPS) {
                T::zero()
            } else {
                let num: T = probs.iter().zip(&values).map(|(&y, &v)| y * v).sum();
                clamp_to_range(num / den, probs)
            }
        }
    };
    Ok(y)
}

/// Gradient of the recording probability `y` with respect to the frame
/// probabilities (and, for attention, the frame weights).
///
/// `y` must be the value returned by [`pool_forward`] for the same inputs.
/// Ties in max pooling route the whole gradient to the lowest maximal index.
pub fn pool_backward<T: Scalar>(
    act: &BagActivation<T>,
    spec: &PoolingSpec,
    y: T,
) -> Result<PoolGradient<T>, PoolError> {
    guard(act, spec)?;
    let probs = &act.probs;
    let n = probs.len();
    let grad = match spec {
        PoolingSpec::Max => {
            let argmax = probs
                .iter()
                .enumerate()
                .fold(0usize, |best, (i, &p)| if p > probs[best] { i } else { best });
            let mut d = vec![T::zero(); n];
            d[argmax] = T::one();
            PoolGradient { d_probs: d, d_weights: None }
        }
        PoolingSpec::Average => {
            let g = T::one() / T::lit(n as f64);
            PoolGradient { d_probs: vec![g; n], d_weights: None }
        }
        PoolingSpec::LinearSoftmax => {
            let den: T = probs.iter().copied().sum();
            let d = if den < T::lit(ZERO_BAG_EPS) {
                vec![T::zero(); n]
            } else {
                let two = T::lit(2.0);
                probs.iter().map(|&yi| (two * yi - y) / den).collect()
            };
            PoolGradient { d_probs: d, d_weights: None }
        }
        PoolingSpec::ExpSoftmax => {
            let m = probs.iter().copied().fold(probs[0], T::max);
            let den: T = probs.iter().map(|&yi| (yi - m).exp()).sum();
            let d = probs
                .iter()
                .map(|&yi| (T::one() - y + yi) * (yi - m).exp() / den)
                .collect();
            PoolGradient { d_probs: d, d_weights: None }
        }
        PoolingSpec::Attention => {
            let weights = act.weights.as_ref().expect("guard checked weights");
            let den: T = weights.iter().copied().sum();
            let d_probs = weights.iter().map(|&w| w / den).collect();
            let d_weights = probs.iter().map(|&yi| (yi - y) / den).collect();
            PoolGradient { d_probs, d_weights: Some(d_weights) }
        }
        PoolingSpec::Generalized { alpha, beta } => {
            let (values, derivs) = generalized_terms(probs, *alpha, *beta);
            let den: T = values.iter().copied().sum();
            let d = if den < T::lit(ZERO_BAG_EPS) {
                vec![T::zero(); n]
            } else {
                probs
                    .iter()
                    .zip(values.iter().zip(&derivs))
                    .map(|(&yi, (&v, &dv))| (v + (yi - y) * dv) / den)
                    .collect()
            };
            PoolGradient { d_probs: d, d_weights: None }
        }
    };
    Ok(grad)
}

/// Central-difference gradient of [`pool_forward`] with step `step`, over all
/// coordinates (probs, and weights when attention). No coordinates are
/// skipped; callers that need the subgradient exclusions use
/// [`finite_diff_deviation`].
pub fn numeric_gradient<T: Scalar>(
    act: &BagActivation<T>,
    spec: &PoolingSpec,
    step: T,
) -> Result<PoolGradient<T>, PoolError> {
    let mut work = act.clone();
    let two_step = T::lit(2.0) * step;
    let mut d_probs = Vec::with_capacity(act.probs.len());
    for i in 0..act.probs.len() {
        let orig = act.probs[i];
        work.probs[i] = orig + step;
        let up = pool_forward(&work, spec)?;
        work.probs[i] = orig - step;
        let down = pool_forward(&work, spec)?;
        work.probs[i] = orig;
        d_probs.push((up - down) / two_step);
    }
    let d_weights = match (&act.weights, spec.uses_weights()) {
        (Some(weights), true) => {
            let mut d = Vec::with_capacity(weights.len());
            for i in 0..weights.len() {
                let orig = weights[i];
                work.weights.as_mut().unwrap()[i] = orig + step;
                let up = pool_forward(&work, spec)?;
                work.weights.as_mut().unwrap()[i] = orig - step;
                let down = pool_forward(&work, spec)?;
                work.weights.as_mut().unwrap()[i] = orig;
                d.push((up - down) / two_step);
            }
            Some(d)
        }
        _ => None,
    };
    Ok(PoolGradient { d_probs, d_weights })
}

fn deviation<T: Scalar>(analytic: T, numeric: T) -> T {
    let d = (analytic - numeric).abs() / T::one().max(analytic.abs());
    // NaN would silently lose against max(); surface it as a hard failure.
    if d.is_nan() {
        T::infinity()
    } else {
        d
    }
}

/// True when a prob coordinate sits on (or too close to) a kink of the pooled
/// function, where a central difference is meaningless.
fn skip_coordinate<T: Scalar>(probs: &[T], i: usize, spec: &PoolingSpec, step: T) -> bool {
    let margin = T::lit(2.0) * step;
    match spec {
        PoolingSpec::Max => {
            // Skip near-ties: perturbing y_i by +-step must not change which
            // frame attains the maximum.
            let mut other_max = T::neg_infinity();
            for (j, &p) in probs.iter().enumerate() {
                if j != i {
                    other_max = other_max.max(p);
                }
            }
            other_max.is_finite() && (probs[i] - other_max).abs() <= margin
        }
        PoolingSpec::Generalized { beta, .. } if *beta > 0.0 && *beta < 1.0 => {
            // The weighting-term floor makes the function piecewise there.
            probs[i] <= T::lit(WEIGHT_TERM_FLOOR) + margin
        }
        _ => false,
    }
}

/// Maximum relative deviation between a supplied analytic gradient and the
/// central-difference gradient, over all checked coordinates.
///
/// Deviation per coordinate is `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_deviation<T: Scalar>(
    act: &BagActivation<T>,
    spec: &PoolingSpec,
    step: T,
    analytic: &PoolGradient<T>,
) -> Result<T, PoolError> {
    let numeric = numeric_gradient(act, spec, step)?;
    let mut worst = T::zero();
    for i in 0..act.probs.len() {
        if skip_coordinate(&act.probs, i, spec, step) {
            continue;
        }
        worst = worst.max(deviation(analytic.d_probs[i], numeric.d_probs[i]));
    }
    if let (Some(a), Some(n)) = (&analytic.d_weights, &numeric.d_weights) {
        for (&ai, &ni) in a.iter().zip(n) {
            worst = worst.max(deviation(ai, ni));
        }
    }
    Ok(worst)
}

/// Checks the analytic gradient of `spec` on `act` against central
/// differences; returns the maximum relative deviation.
///
/// For max pooling, coordinates within `2 * step` of the (other frames')
/// maximum are skipped: the subgradient is discontinuous across ties.
pub fn finite_diff_check<T: Scalar>(
    act: &BagActivation<T>,
    spec: &PoolingSpec,
    step: T,
) -> Result<T, PoolError> {
    let y = pool_forward(act, spec)?;
    let analytic = pool_backward(act, spec, y)?;
    finite_diff_deviation(act, spec, step, &analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_bag(rng: &mut ChaCha8Rng, n: usize, with_weights: bool) -> BagActivation<f64> {
        let probs = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        if with_weights {
            let weights = (0..n).map(|_| rng.random_range(0.1..=3.0)).collect();
            BagActivation::with_weights(probs, weights)
        } else {
            BagActivation::new(probs)
        }
    }

    #[test]
    fn constant_bag_pools_to_the_constant_for_every_kind() {
        let c = 0.37;
        for spec in [
            PoolingSpec::Max,
            PoolingSpec::Average,
            PoolingSpec::LinearSoftmax,
            PoolingSpec::ExpSoftmax,
            PoolingSpec::Attention,
            PoolingSpec::generalized(0.7, 1.3).unwrap(),
        ] {
            let act = BagActivation::with_weights(vec![c; 7], vec![1.0; 7]);
            assert_eq!(pool_forward(&act, &spec).unwrap(), c, "kind {spec}");
        }
    }

    #[test]
    fn linear_softmax_two_frame_example() {
        let act = BagActivation::new(vec![0.2, 0.8]);
        let y = pool_forward(&act, &PoolingSpec::LinearSoftmax).unwrap();
        assert!(close(y, 0.68, 1e-12));
        let g = pool_backward(&act, &PoolingSpec::LinearSoftmax, y).unwrap();
        assert!(close(g.d_probs[0], -0.28, 1e-12));
        assert!(close(g.d_probs[1], 0.92, 1e-12));
        assert!(g.d_weights.is_none());
    }

    #[test]
    fn attention_two_frame_example() {
        let act = BagActivation::with_weights(vec![0.2, 0.8], vec![1.0, 3.0]);
        let y = pool_forward(&act, &PoolingSpec::Attention).unwrap();
        assert!(close(y, 0.65, 1e-12));
        let g = pool_backward(&act, &PoolingSpec::Attention, y).unwrap();
        assert!(close(g.d_probs[0], 0.25, 1e-12));
        assert!(close(g.d_probs[1], 0.75, 1e-12));
        let dw = g.d_weights.unwrap();
        assert!(close(dw[0], -0.1125, 1e-12));
        assert!(close(dw[1], 0.0375, 1e-12));
    }

    #[test]
    fn max_forward_and_indicator_gradient() {
        let act = BagActivation::new(vec![0.3, 0.7, 0.5]);
        let y = pool_forward(&act, &PoolingSpec::Max).unwrap();
        assert_eq!(y, 0.7);
        let g = pool_backward(&act, &PoolingSpec::Max, y).unwrap();
        assert_eq!(g.d_probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn max_tie_routes_gradient_to_lowest_index() {
        let act = BagActivation::new(vec![0.2, 0.9, 0.9]);
        let y = pool_forward(&act, &PoolingSpec::Max).unwrap();
        let g = pool_backward(&act, &PoolingSpec::Max, y).unwrap();
        assert_eq!(g.d_probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn average_gradient_is_uniform() {
        let act = BagActivation::new(vec![0.1, 0.9, 0.4, 0.6]);
        let y = pool_forward(&act, &PoolingSpec::Average).unwrap();
        let g = pool_backward(&act, &PoolingSpec::Average, y).unwrap();
        assert_eq!(g.d_probs, vec![0.25; 4]);
    }

    #[test]
    fn empty_bag_is_rejected() {
        let act = BagActivation::<f64>::new(vec![]);
        assert_eq!(pool_forward(&act, &PoolingSpec::Average).unwrap_err(), PoolError::EmptyBag);
        assert_eq!(act.validate().unwrap_err(), PoolError::EmptyBag);
    }

    #[test]
    fn attention_without_weights_is_rejected() {
        let act = BagActivation::new(vec![0.5, 0.5]);
        assert_eq!(
            pool_forward(&act, &PoolingSpec::Attention).unwrap_err(),
            PoolError::MissingWeights
        );
    }

    #[test]
    fn validate_catches_bad_entries() {
        let act = BagActivation::new(vec![0.5, 1.5]);
        assert!(matches!(act.validate().unwrap_err(), PoolError::ProbOutOfRange { index: 1, .. }));
        let act = BagActivation::with_weights(vec![0.5], vec![0.0]);
        assert!(matches!(act.validate().unwrap_err(), PoolError::NonPositiveWeight { index: 0, .. }));
        let act = BagActivation::with_weights(vec![0.5, 0.5], vec![1.0]);
        assert!(matches!(act.validate().unwrap_err(), PoolError::LengthMismatch { .. }));
    }

    #[test]
    fn linear_softmax_all_zero_bag_is_zero_with_zero_gradient() {
        let act = BagActivation::new(vec![0.0; 5]);
        let y = pool_forward(&act, &PoolingSpec::LinearSoftmax).unwrap();
        assert_eq!(y, 0.0);
        let g = pool_backward(&act, &PoolingSpec::LinearSoftmax, y).unwrap();
        assert_eq!(g.d_probs, vec![0.0; 5]);
    }

    #[test]
    fn generalized_reduces_to_the_named_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reductions = [
            (PoolingSpec::generalized(0.0, 1.0).unwrap(), PoolingSpec::LinearSoftmax),
            (PoolingSpec::generalized(1.0, 0.0).unwrap(), PoolingSpec::ExpSoftmax),
            (PoolingSpec::generalized(0.0, 0.0).unwrap(), PoolingSpec::Average),
        ];
        for _ in 0..200 {
            let n = rng.random_range(1..=30);
            let act = random_bag(&mut rng, n, false);
            for (gen, named) in &reductions {
                let yg = pool_forward(&act, gen).unwrap();
                let yn = pool_forward(&act, named).unwrap();
                assert!(close(yg, yn, 1e-12), "{gen} vs {named}: {yg} vs {yn}");
                let gg = pool_backward(&act, gen, yg).unwrap();
                let gn = pool_backward(&act, named, yn).unwrap();
                for (a, b) in gg.d_probs.iter().zip(&gn.d_probs) {
                    assert!(close(*a, *b, 1e-12), "{gen} vs {named} gradient: {a} vs {b}");
                }
            }
        }
        // Bags touching the endpoints exactly still reduce.
        let act = BagActivation::new(vec![0.0, 1.0, 0.5, 0.0]);
        for (gen, named) in &reductions {
            let yg = pool_forward(&act, gen).unwrap();
            let yn = pool_forward(&act, named).unwrap();
            assert!(close(yg, yn, 1e-12));
        }
    }

    #[test]
    fn generalized_fractional_beta_stays_finite_at_zero() {
        let act = BagActivation::new(vec![0.0, 0.5]);
        let spec = PoolingSpec::generalized(0.5, 0.3).unwrap();
        let y: f64 = pool_forward(&act, &spec).unwrap();
        assert!(y.is_finite());
        let g = pool_backward(&act, &spec, y).unwrap();
        assert!(g.is_finite(), "gradient {:?}", g.d_probs);
    }

    #[test]
    fn negative_beta_is_rejected() {
        assert_eq!(PoolingSpec::generalized(0.0, -1.0).unwrap_err(), PoolError::NegativeBeta(-1.0));
    }

    #[test]
    fn finite_diff_passes_on_random_bags_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let specs = [
            PoolingSpec::Max,
            PoolingSpec::Average,
            PoolingSpec::LinearSoftmax,
            PoolingSpec::ExpSoftmax,
            PoolingSpec::Attention,
            PoolingSpec::generalized(0.0, 1.0).unwrap(),
            PoolingSpec::generalized(1.0, 0.0).unwrap(),
            PoolingSpec::generalized(0.5, 2.0).unwrap(),
        ];
        for spec in specs {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let n = rng.random_range(1..=50);
                let act = random_bag(&mut rng, n, spec.uses_weights());
                worst = worst.max(finite_diff_check(&act, &spec, 1e-5).unwrap());
            }
            assert!(worst <= 1e-5, "kind {spec}: worst deviation {worst}");
        }
    }

    #[test]
    fn finite_diff_constant_bag_average_is_exact() {
        let act = BagActivation::new(vec![0.4; 6]);
        let dev = finite_diff_check(&act, &PoolingSpec::Average, 1e-5).unwrap();
        assert!(dev <= 1e-10, "deviation {dev}");
    }

    #[test]
    fn finite_diff_covers_attention_weight_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let act = random_bag(&mut rng, 12, true);
        let dev = finite_diff_check(&act, &PoolingSpec::Attention, 1e-5).unwrap();
        assert!(dev <= 1e-5, "deviation {dev}");
        // The numeric gradient really does include the weight coordinates.
        let numeric = numeric_gradient(&act, &PoolingSpec::Attention, 1e-5).unwrap();
        assert_eq!(numeric.d_weights.unwrap().len(), 12);
    }

    #[test]
    fn finite_diff_deviation_flags_a_corrupted_gradient() {
        let act = BagActivation::new(vec![0.2, 0.8, 0.5]);
        let y = pool_forward(&act, &PoolingSpec::LinearSoftmax).unwrap();
        let mut grad = pool_backward(&act, &PoolingSpec::LinearSoftmax, y).unwrap();
        grad.d_probs[0] += 0.5;
        let dev = finite_diff_deviation(&act, &PoolingSpec::LinearSoftmax, 1e-5, &grad).unwrap();
        assert!(dev > 0.1, "deviation {dev}");
    }

    #[test]
    fn nan_in_the_analytic_gradient_cannot_pass() {
        let act = BagActivation::new(vec![0.2, 0.8]);
        let y = pool_forward(&act, &PoolingSpec::Average).unwrap();
        let mut grad = pool_backward(&act, &PoolingSpec::Average, y).unwrap();
        grad.d_probs[1] = f64::NAN;
        let dev = finite_diff_deviation(&act, &PoolingSpec::Average, 1e-5, &grad).unwrap();
        assert_eq!(dev, f64::INFINITY);
    }

    #[test]
    fn single_frame_bag_is_the_identity() {
        for spec in [PoolingSpec::Max, PoolingSpec::LinearSoftmax, PoolingSpec::ExpSoftmax] {
            let act = BagActivation::new(vec![0.42]);
            assert!(close(pool_forward(&act, &spec).unwrap(), 0.42, 1e-15));
            assert!(close(finite_diff_check(&act, &spec, 1e-5).unwrap(), 0.0, 1e-9));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let act = BagActivation::<f32>::new(vec![0.2, 0.8]);
        let y = pool_forward(&act, &PoolingSpec::LinearSoftmax).unwrap();
        assert!((y - 0.68).abs() < 1e-6);
        let g = pool_backward(&act, &PoolingSpec::LinearSoftmax, y).unwrap();
        assert!((g.d_probs[1] - 0.92).abs() < 1e-6);
    }

    #[test]
    fn spec_serde_round_trips_with_kebab_case_tags() {
        let spec = PoolingSpec::generalized(1.5, 0.5).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"generalized\""), "{json}");
        assert_eq!(serde_json::from_str::<PoolingSpec>(&json).unwrap(), spec);
        let json = serde_json::to_string(&PoolingSpec::LinearSoftmax).unwrap();
        assert_eq!(json, "{\"kind\":\"linear-softmax\"}");
    }
}
