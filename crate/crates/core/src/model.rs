//! Per-frame probability predictor trained through a pooling function.
//!
//! The predictor is a multilayer perceptron with tanh hidden layers applied
//! to each frame's symmetric context window (2r+1 frames concatenated,
//! zero-padded at the recording edges). Two affine heads sit on the last
//! hidden layer: a sigmoid head producing one probability per class per
//! frame, and an attention head whose logits are clamped and exponentiated
//! into positive per-class frame weights.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Bag;
use crate::pooling::{pool_backward, pool_forward, BagActivation, PoolError, PoolingSpec};
use crate::Real;

/// Recording probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]`
/// inside the cross-entropy so the loss stays finite.
pub const PROB_EPS: Real = 1e-7;

/// Attention logits are clamped to this magnitude before exponentiation,
/// bounding weight ratios.
pub const ATTN_LOGIT_CLAMP: Real = 10.0;

/// Errors from the frame predictor.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("feature dimension mismatch: model expects {expected}, bag has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class count mismatch: model expects {expected}, bag has {got}")]
    ClassMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// One affine layer, `out x in` weight plus bias. Doubles as the gradient
/// container for itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<Real>,
    pub bias: Array1<Real>,
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Self {
        let scale = 1.0 / (in_dim as Real).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-scale..=scale));
        let bias = Array1::from_shape_fn(out_dim, |_| rng.random_range(-scale..=scale));
        Self { weight, bias }
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    fn forward(&self, x: &Array2<Real>) -> Array2<Real> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// All parameters of the frame predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub context_radius: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub hidden_sizes: Vec<usize>,
    pub hidden: Vec<Dense>,
    /// Frame scorer head: one sigmoid logit per class per frame.
    pub score: Dense,
    /// Attention head: one weight logit per class per frame.
    pub attention: Dense,
}

impl ModelParams {
    /// Seeded uniform initialization in `[-s, s]` with `s = 1/sqrt(fan_in)`.
    pub fn init(
        feature_dim: usize,
        classes: usize,
        context_radius: usize,
        hidden_sizes: &[usize],
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(feature_dim, classes, context_radius, hidden_sizes, &mut rng)
    }

    pub(crate) fn init_with_rng(
        feature_dim: usize,
        classes: usize,
        context_radius: usize,
        hidden_sizes: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input_dim = feature_dim * (2 * context_radius + 1);
        let mut hidden = Vec::with_capacity(hidden_sizes.len());
        let mut in_dim = input_dim;
        for &out_dim in hidden_sizes {
            hidden.push(Dense::init(rng, out_dim, in_dim));
            in_dim = out_dim;
        }
        Self {
            context_radius,
            feature_dim,
            classes,
            hidden_sizes: hidden_sizes.to_vec(),
            hidden,
            score: Dense::init(rng, classes, in_dim),
            attention: Dense::init(rng, classes, in_dim),
        }
    }

    /// All-zero parameters; useful as a known fixed point (probabilities 0.5,
    /// weights 1).
    pub fn zeros(feature_dim: usize, classes: usize, context_radius: usize, hidden_sizes: &[usize]) -> Self {
        let input_dim = feature_dim * (2 * context_radius + 1);
        let mut hidden = Vec::with_capacity(hidden_sizes.len());
        let mut in_dim = input_dim;
        for &out_dim in hidden_sizes {
            hidden.push(Dense::zeros(out_dim, in_dim));
            in_dim = out_dim;
        }
        Self {
            context_radius,
            feature_dim,
            classes,
            hidden_sizes: hidden_sizes.to_vec(),
            hidden,
            score: Dense::zeros(classes, in_dim),
            attention: Dense::zeros(classes, in_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim * (2 * self.context_radius + 1)
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain([&self.score, &self.attention])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain([&mut self.score, &mut self.attention])
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|d| d.weight.len() + d.bias.len()).sum()
    }

    /// Row-major flattening of every tensor, hidden layers first, then the
    /// score and attention heads.
    pub fn flatten(&self) -> Vec<Real> {
        let mut flat = Vec::with_capacity(self.param_count());
        for dense in self.layers() {
            flat.extend(dense.weight.iter());
            flat.extend(dense.bias.iter());
        }
        flat
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn assign_from_flat(&mut self, flat: &[Real]) {
        let mut it = flat.iter();
        for dense in self.layers_mut() {
            for w in dense.weight.iter_mut() {
                *w = *it.next().expect("flat vector too short");
            }
            for b in dense.bias.iter_mut() {
                *b = *it.next().expect("flat vector too short");
            }
        }
        assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Gradients (or momentum buffers) with the same shape as [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub hidden: Vec<Dense>,
    pub score: Dense,
    pub attention: Dense,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zero = |d: &Dense| Dense {
            weight: Array2::zeros(d.weight.raw_dim()),
            bias: Array1::zeros(d.bias.raw_dim()),
        };
        Self {
            hidden: params.hidden.iter().map(zero).collect(),
            score: zero(&params.score),
            attention: zero(&params.attention),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain([&self.score, &self.attention])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain([&mut self.score, &mut self.attention])
    }

    pub fn scale(&mut self, factor: Real) {
        for dense in self.layers_mut() {
            dense.weight.mapv_inplace(|g| g * factor);
            dense.bias.mapv_inplace(|g| g * factor);
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (mine, theirs) in self.layers_mut().zip(other.layers()) {
            mine.weight += &theirs.weight;
            mine.bias += &theirs.bias;
        }
    }

    pub fn flatten(&self) -> Vec<Real> {
        let mut flat = Vec::new();
        for dense in self.layers() {
            flat.extend(dense.weight.iter());
            flat.extend(dense.bias.iter());
        }
        flat
    }
}

impl ModelParams {
    /// Momentum SGD update: `v = momentum * v - lr * g; theta += v`.
    pub fn sgd_momentum_step(&mut self, grads: &ModelGrads, velocity: &mut ModelGrads, lr: Real, momentum: Real) {
        for ((param, grad), vel) in self.layers_mut().zip(grads.layers()).zip(velocity.layers_mut()) {
            vel.weight.zip_mut_with(&grad.weight, |v, &g| *v = momentum * *v - lr * g);
            vel.bias.zip_mut_with(&grad.bias, |v, &g| *v = momentum * *v - lr * g);
            param.weight += &vel.weight;
            param.bias += &vel.bias;
        }
    }
}

fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Concatenates each frame's symmetric context window, zero-padded at the
/// edges, into one row per frame.
fn window_input(features: &Array2<Real>, radius: usize) -> Array2<Real> {
    let (frames, dim) = features.dim();
    let mut out = Array2::zeros((frames, dim * (2 * radius + 1)));
    for i in 0..frames {
        for (slot, offset) in (-(radius as isize)..=radius as isize).enumerate() {
            let j = i as isize + offset;
            if j >= 0 && (j as usize) < frames {
                let src = features.row(j as usize);
                let mut dst = out.row_mut(i);
                for d in 0..dim {
                    dst[slot * dim + d] = src[d];
                }
            }
        }
    }
    out
}

pub(crate) struct ForwardCache {
    pub input: Array2<Real>,
    /// Output of each tanh hidden layer, in order.
    pub hidden_outputs: Vec<Array2<Real>>,
    pub attn_logits: Array2<Real>,
    pub probs: Array2<Real>,
    pub weights: Array2<Real>,
}

impl ForwardCache {
    fn last_hidden(&self) -> &Array2<Real> {
        self.hidden_outputs.last().unwrap_or(&self.input)
    }
}

fn check_features(params: &ModelParams, features: &Array2<Real>) -> Result<(), ModelError> {
    if features.ncols() != params.feature_dim {
        return Err(ModelError::DimensionMismatch { expected: params.feature_dim, got: features.ncols() });
    }
    Ok(())
}

pub(crate) fn forward_cached(params: &ModelParams, features: &Array2<Real>) -> Result<ForwardCache, ModelError> {
    check_features(params, features)?;
    let input = window_input(features, params.context_radius);
    let mut hidden_outputs = Vec::with_capacity(params.hidden.len());
    let mut h = input.clone();
    for layer in &params.hidden {
        h = layer.forward(&h).mapv(Real::tanh);
        hidden_outputs.push(h.clone());
    }
    let probs = params.score.forward(&h).mapv(sigmoid);
    let attn_logits = params.attention.forward(&h);
    let weights = attn_logits.mapv(|z| z.clamp(-ATTN_LOGIT_CLAMP, ATTN_LOGIT_CLAMP).exp());
    Ok(ForwardCache { input, hidden_outputs, attn_logits, probs, weights })
}

/// Per-frame probabilities and attention weights for one bag, both
/// `frames x classes`.
pub fn frame_forward(params: &ModelParams, bag: &Bag) -> Result<(Array2<Real>, Array2<Real>), ModelError> {
    let cache = forward_cached(params, &bag.features)?;
    Ok((cache.probs, cache.weights))
}

/// Pools one class column into a recording probability.
fn class_activation(probs: &Array2<Real>, weights: &Array2<Real>, class: usize, spec: &PoolingSpec) -> BagActivation<Real> {
    let p: Vec<Real> = probs.column(class).iter().copied().collect();
    if spec.uses_weights() {
        let w: Vec<Real> = weights.column(class).iter().copied().collect();
        BagActivation::with_weights(p, w)
    } else {
        BagActivation::new(p)
    }
}

/// Bag-level cross-entropy summed over classes, plus the (unclamped)
/// recording probability per class.
///
/// The loss term for class `c` is `-t log y - (1-t) log(1-y)` with `y`
/// clamped into `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bag_loss(
    probs: &Array2<Real>,
    weights: &Array2<Real>,
    bag_labels: &[u8],
    spec: &PoolingSpec,
) -> Result<(Real, Vec<Real>), ModelError> {
    if bag_labels.len() != probs.ncols() {
        return Err(ModelError::ClassMismatch { expected: probs.ncols(), got: bag_labels.len() });
    }
    let mut loss = 0.0;
    let mut recording = Vec::with_capacity(bag_labels.len());
    for (class, &t) in bag_labels.iter().enumerate() {
        let act = class_activation(probs, weights, class, spec);
        let y = pool_forward(&act, spec)?;
        let yc = y.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss += if t == 1 { -yc.ln() } else { -(1.0 - yc).ln() };
        recording.push(y);
    }
    Ok((loss, recording))
}

/// Everything the backward pass produces for one bag.
pub struct BagBackward {
    pub loss: Real,
    /// Unclamped recording probability per class.
    pub recording_probs: Vec<Real>,
    /// `dL/dy_i` per frame and class (after the pooling gradient, before the
    /// sigmoid).
    pub frame_prob_grads: Array2<Real>,
    /// `dL/dw_i` per frame and class; zero except under attention pooling.
    pub frame_weight_grads: Array2<Real>,
    pub grads: ModelGrads,
}

/// Forward plus exact backward pass of the bag-level cross-entropy through
/// the pooling function, the heads, and the MLP.
pub fn bag_backward(params: &ModelParams, bag: &Bag, spec: &PoolingSpec) -> Result<BagBackward, ModelError> {
    if bag.classes() != params.classes {
        return Err(ModelError::ClassMismatch { expected: params.classes, got: bag.classes() });
    }
    let cache = forward_cached(params, &bag.features)?;
    let (frames, classes) = cache.probs.dim();

    let mut loss = 0.0;
    let mut recording_probs = Vec::with_capacity(classes);
    let mut frame_prob_grads = Array2::zeros((frames, classes));
    let mut frame_weight_grads = Array2::zeros((frames, classes));

    for (class, &t) in bag.bag_labels.iter().enumerate() {
        let act = class_activation(&cache.probs, &cache.weights, class, spec);
        let y = pool_forward(&act, spec)?;
        let yc = y.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss += if t == 1 { -yc.ln() } else { -(1.0 - yc).ln() };
        recording_probs.push(y);

        // dL/dy; zero where the loss clamp is active (the clamped loss is
        // locally constant in y there).
        let upstream = if yc == y {
            let tf = t as Real;
            -tf / yc + (1.0 - tf) / (1.0 - yc)
        } else {
            0.0
        };
        let pool_grad = pool_backward(&act, spec, y)?;
        for (i, &g) in pool_grad.d_probs.iter().enumerate() {
            frame_prob_grads[[i, class]] = upstream * g;
        }
        if let Some(d_weights) = pool_grad.d_weights {
            for (i, &g) in d_weights.iter().enumerate() {
                frame_weight_grads[[i, class]] = upstream * g;
            }
        }
    }

    // Through the sigmoid score head and the clamped-exp attention head.
    let mut d_score_logits = frame_prob_grads.clone();
    d_score_logits.zip_mut_with(&cache.probs, |g, &p| *g *= p * (1.0 - p));
    let mut d_attn_logits = frame_weight_grads.clone();
    d_attn_logits.zip_mut_with(&cache.weights, |g, &w| *g *= w);
    d_attn_logits.zip_mut_with(&cache.attn_logits, |g, &z| {
        if z.abs() >= ATTN_LOGIT_CLAMP {
            *g = 0.0;
        }
    });

    let mut grads = ModelGrads::zeros_like(params);
    let last_hidden = cache.last_hidden();
    grads.score.weight = d_score_logits.t().dot(last_hidden);
    grads.score.bias = d_score_logits.sum_axis(Axis(0));
    grads.attention.weight = d_attn_logits.t().dot(last_hidden);
    grads.attention.bias = d_attn_logits.sum_axis(Axis(0));

    let mut d_hidden = d_score_logits.dot(&params.score.weight) + d_attn_logits.dot(&params.attention.weight);
    for layer_idx in (0..params.hidden.len()).rev() {
        let h = &cache.hidden_outputs[layer_idx];
        let mut d_pre = d_hidden;
        d_pre.zip_mut_with(h, |g, &v| *g *= 1.0 - v * v);
        let below = if layer_idx == 0 { &cache.input } else { &cache.hidden_outputs[layer_idx - 1] };
        grads.hidden[layer_idx].weight = d_pre.t().dot(below);
        grads.hidden[layer_idx].bias = d_pre.sum_axis(Axis(0));
        d_hidden = d_pre.dot(&params.hidden[layer_idx].weight);
    }

    Ok(BagBackward { loss, recording_probs, frame_prob_grads, frame_weight_grads, grads })
}

/// Bag loss as a function of the parameters alone; used by the
/// finite-difference checker.
pub fn bag_loss_for(params: &ModelParams, bag: &Bag, spec: &PoolingSpec) -> Result<Real, ModelError> {
    let cache = forward_cached(params, &bag.features)?;
    let (loss, _) = bag_loss(&cache.probs, &cache.weights, &bag.bag_labels, spec)?;
    Ok(loss)
}

/// Whole-model gradient check: compares the analytic parameter gradient of
/// the bag loss against central differences over every parameter entry.
/// Returns the maximum relative deviation `|a - n| / max(1, |a|)`.
pub fn model_grad_check(params: &ModelParams, bag: &Bag, spec: &PoolingSpec, step: Real) -> Result<Real, ModelError> {
    let analytic = bag_backward(params, bag, spec)?.grads.flatten();
    let theta = params.flatten();
    let mut work = params.clone();
    let mut worst: Real = 0.0;
    let mut perturbed = theta.clone();
    for i in 0..theta.len() {
        perturbed[i] = theta[i] + step;
        work.assign_from_flat(&perturbed);
        let up = bag_loss_for(&work, bag, spec)?;
        perturbed[i] = theta[i] - step;
        work.assign_from_flat(&perturbed);
        let down = bag_loss_for(&work, bag, spec)?;
        perturbed[i] = theta[i];
        let numeric = (up - down) / (2.0 * step);
        let deviation = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = if deviation.is_nan() { Real::INFINITY } else { worst.max(deviation) };
    }
    Ok(worst)
}
