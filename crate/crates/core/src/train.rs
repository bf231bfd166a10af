//! End-to-end training of the frame predictor through a pooling function.
//!
//! Training is single-threaded and fully deterministic given the config:
//! identical config, seed, and dataset produce bit-identical parameters and
//! loss traces.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Bag;
use crate::model::{bag_backward, ModelError, ModelGrads, ModelParams, ATTN_LOGIT_CLAMP, PROB_EPS};
use crate::pooling::{pool_backward, pool_forward, BagActivation, PoolError, PoolingSpec};
use crate::Real;

/// Errors from training.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {class} has no positive recording")]
    NoPositives { class: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}, class {class}")]
    NonFiniteLoss { epoch: usize, batch: usize, class: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pooling: PoolingSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Real,
    pub momentum: Real,
    pub seed: u64,
    /// Class-balanced minibatch sampling; when off, plain shuffled batches.
    pub balancing: bool,
    pub context_radius: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pooling: PoolingSpec::LinearSoftmax,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.3,
            momentum: 0.9,
            seed: 7,
            balancing: true,
            context_radius: 1,
            hidden_sizes: vec![16],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        self.pooling
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// One epoch of class-balanced minibatches: batch slots are assigned to
/// classes round-robin, and each slot draws from that class's shuffled queue
/// of positive recordings, reshuffling (sampling with replacement) whenever a
/// queue runs out. The epoch holds `ceil(len / batch_size)` full batches.
pub fn balanced_batches(bags: &[Bag], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if bags.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let classes = bags[0].classes();
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (idx, bag) in bags.iter().enumerate() {
        for (class, &t) in bag.bag_labels.iter().enumerate() {
            if t == 1 {
                positives[class].push(idx);
            }
        }
    }
    for (class, pool) in positives.iter().enumerate() {
        if pool.is_empty() {
            return Err(TrainError::NoPositives { class });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<Vec<usize>> = positives
        .iter()
        .map(|pool| {
            let mut q = pool.clone();
            q.shuffle(&mut rng);
            q
        })
        .collect();

    let num_batches = bags.len().div_ceil(batch_size);
    let mut batches = Vec::with_capacity(num_batches);
    let mut class_cursor = 0usize;
    for _ in 0..num_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let class = class_cursor % classes;
            class_cursor += 1;
            if queues[class].is_empty() {
                let mut q = positives[class].clone();
                q.shuffle(&mut rng);
                queues[class] = q;
            }
            batch.push(queues[class].pop().expect("queue refilled above"));
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// One epoch of plain uniformly shuffled batches (balancing off); the last
/// batch may be short.
pub fn shuffled_batches(bags: &[Bag], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if bags.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// A trained model plus its per-epoch mean bag loss.
pub struct TrainOutput {
    pub params: ModelParams,
    pub loss_trace: Vec<Real>,
}

/// Trains the frame predictor end to end through the configured pooling
/// function with bag-level cross-entropy and momentum SGD.
pub fn train(bags: &[Bag], config: &TrainConfig) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    let first = bags.first().ok_or(TrainError::EmptyDataset)?;
    let feature_dim = first.dim();
    let classes = first.classes();
    for bag in bags {
        if bag.dim() != feature_dim {
            return Err(ModelError::DimensionMismatch { expected: feature_dim, got: bag.dim() }.into());
        }
        if bag.classes() != classes {
            return Err(ModelError::ClassMismatch { expected: classes, got: bag.classes() }.into());
        }
    }

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init_with_rng(
        feature_dim,
        classes,
        config.context_radius,
        &config.hidden_sizes,
        &mut master,
    );
    let mut velocity = ModelGrads::zeros_like(&params);
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let epoch_seed: u64 = master.random();
        let batches = if config.balancing {
            balanced_batches(bags, config.batch_size, epoch_seed)?
        } else {
            shuffled_batches(bags, config.batch_size, epoch_seed)?
        };
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let mut grads = ModelGrads::zeros_like(&params);
            let mut batch_loss = 0.0;
            for &bag_idx in batch {
                let out = bag_backward(&params, &bags[bag_idx], &config.pooling)?;
                if !out.loss.is_finite() {
                    let class = out
                        .recording_probs
                        .iter()
                        .position(|y| !y.is_finite())
                        .unwrap_or(0);
                    return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx, class });
                }
                batch_loss += out.loss;
                grads.add_assign(&out.grads);
            }
            let inv = 1.0 / batch.len() as Real;
            grads.scale(inv);
            params.sgd_momentum_step(&grads, &mut velocity, config.learning_rate, config.momentum);
            epoch_loss += batch_loss * inv;
        }
        loss_trace.push(epoch_loss / batches.len() as Real);
    }

    Ok(TrainOutput { params, loss_trace })
}

/// A bag with one free logit per frame (and one free attention logit per
/// frame), optimized directly by gradient descent. This strips the shared
/// predictor away, leaving only the pooling function's training dynamics.
#[derive(Clone, Debug)]
pub struct FreeBagModel {
    pub logits: Vec<Real>,
    pub attn_logits: Vec<Real>,
}

impl FreeBagModel {
    pub fn new(logits: Vec<Real>) -> Self {
        let attn_logits = vec![0.0; logits.len()];
        Self { logits, attn_logits }
    }

    pub fn with_attention(logits: Vec<Real>, attn_logits: Vec<Real>) -> Self {
        assert_eq!(logits.len(), attn_logits.len());
        Self { logits, attn_logits }
    }

    pub fn probs(&self) -> Vec<Real> {
        self.logits.iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect()
    }

    pub fn weights(&self) -> Vec<Real> {
        self.attn_logits
            .iter()
            .map(|&z| z.clamp(-ATTN_LOGIT_CLAMP, ATTN_LOGIT_CLAMP).exp())
            .collect()
    }

    pub fn activation(&self, spec: &PoolingSpec) -> BagActivation<Real> {
        if spec.uses_weights() {
            BagActivation::with_weights(self.probs(), self.weights())
        } else {
            BagActivation::new(self.probs())
        }
    }

    pub fn recording_prob(&self, spec: &PoolingSpec) -> Result<Real, PoolError> {
        pool_forward(&self.activation(spec), spec)
    }

    /// One gradient-descent step on the single-class bag cross-entropy.
    /// Returns the recording probability before the step.
    pub fn step(&mut self, spec: &PoolingSpec, label: u8, lr: Real) -> Result<Real, PoolError> {
        let act = self.activation(spec);
        let y = pool_forward(&act, spec)?;
        let yc = y.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let upstream = if yc == y {
            let t = label as Real;
            -t / yc + (1.0 - t) / (1.0 - yc)
        } else {
            0.0
        };
        let grad = pool_backward(&act, spec, y)?;
        for (i, &g) in grad.d_probs.iter().enumerate() {
            let p = act.probs[i];
            self.logits[i] -= lr * upstream * g * p * (1.0 - p);
        }
        if let Some(d_weights) = grad.d_weights {
            let weights = act.weights.as_ref().expect("attention activation has weights");
            for (i, &g) in d_weights.iter().enumerate() {
                if self.attn_logits[i].abs() < ATTN_LOGIT_CLAMP {
                    self.attn_logits[i] -= lr * upstream * g * weights[i];
                }
            }
        }
        Ok(y)
    }
}
