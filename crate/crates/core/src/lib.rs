//! Multiple-instance-learning pooling for weakly labeled sound event detection.
//!
//! A recording is a bag of frames. A frame-level predictor emits a probability
//! per frame and class, and a pooling function aggregates those into one
//! recording-level probability that can be trained against weak (bag-level)
//! labels. This crate provides:
//!
//! - [`pooling`]: five pooling functions (max, average, linear softmax,
//!   exponential softmax, attention) plus a generalized weighting family,
//!   each with exact analytic gradients and a finite-difference checker.
//! - [`model`] / [`train`]: a small windowed MLP frame predictor trained
//!   end-to-end through any of the pooling functions with bag-level
//!   cross-entropy, including a class-balanced minibatch sampler.
//! - [`metrics`]: recording-level tagging metrics, segment-based localization
//!   metrics with substitution/deletion/insertion decomposition, and ranking
//!   metrics (MAP, MAUC, d-prime).
//! - [`synth`]: a deterministic generator of synthetic weakly labeled corpora
//!   with exact frame-level ground truth.
//! - [`dataset`] / [`eval`]: line-delimited dataset and checkpoint formats,
//!   and the evaluation pipeline tying predictor, thresholds, and metrics
//!   together.
//!
//! The pooling math is generic over the scalar type ([`Scalar`], implemented
//! for `f32` and `f64`); everything downstream of it runs on [`Real`].

pub mod dataset;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod pooling;
pub mod scalar;
pub mod synth;
pub mod train;

pub use pooling::{BagActivation, PoolError, PoolGradient, PoolingSpec};
pub use scalar::Scalar;

/// Default scalar for the training and evaluation pipeline. All documented
/// tolerances assume 64-bit arithmetic.
pub type Real = f64;

/// Bag activation over the default scalar.
pub type Activation = BagActivation<Real>;

/// Pooling gradient over the default scalar.
pub type Gradient = PoolGradient<Real>;
