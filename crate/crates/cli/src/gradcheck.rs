//! The `gradcheck` command: analytic gradients vs central differences, at
//! the pooling level over random bags and end to end through the model.

use clap::Args;
use milpool_core::dataset::Bag;
use milpool_core::model::{model_grad_check, ModelParams};
use milpool_core::pooling::{
    finite_diff_deviation, pool_backward, pool_forward, BagActivation, PoolingSpec,
};
use milpool_core::Real;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::PoolingFlags;

/// Tolerance for the pooling-level check.
pub const POOL_TOLERANCE: Real = 1e-5;
/// Tolerance for the whole-model check.
pub const MODEL_TOLERANCE: Real = 1e-4;

/// Generalized-family settings exercised by the default run, alongside the
/// five named pooling functions.
pub const GENERALIZED_SETTINGS: [(f64, f64); 3] = [(0.0, 1.0), (1.0, 0.0), (0.5, 2.0)];

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Restrict the check to one pooling function (default: all five plus
    /// three generalized settings).
    #[command(flatten)]
    pub pooling: PoolingFlags,
    /// Random bags per pooling function.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: Real,
    /// Test hook: corrupt one analytic gradient entry to exercise the
    /// failure path.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        Self {
            pooling: PoolingFlags::default(),
            trials: 100,
            seed: 42,
            step: 1e-5,
            corrupt: false,
        }
    }
}

/// Result of one pooling function's check.
#[derive(Debug, Clone)]
pub struct GradcheckEntry {
    pub pooling: PoolingSpec,
    pub pool_deviation: Real,
    pub model_deviation: Real,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.pool_deviation <= POOL_TOLERANCE && self.model_deviation <= MODEL_TOLERANCE
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradcheckEntry::passed)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.entries.is_empty() {
            return writeln!(f, "gradcheck: no trials run");
        }
        for e in &self.entries {
            writeln!(
                f,
                "gradcheck {:<28} pool {:.3e} (tol {POOL_TOLERANCE:.0e})  model {:.3e} (tol {MODEL_TOLERANCE:.0e})  {}",
                e.pooling.to_string(),
                e.pool_deviation,
                e.model_deviation,
                if e.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        writeln!(f, "gradcheck: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn random_bag(rng: &mut ChaCha8Rng, with_weights: bool) -> BagActivation<Real> {
    let n = rng.random_range(1..=50);
    let probs = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
    if with_weights {
        let weights = (0..n).map(|_| rng.random_range(0.1..=3.0)).collect();
        BagActivation::with_weights(probs, weights)
    } else {
        BagActivation::new(probs)
    }
}

fn pool_check(spec: &PoolingSpec, args: &GradcheckArgs, rng: &mut ChaCha8Rng) -> anyhow::Result<Real> {
    let mut worst: Real = 0.0;
    for trial in 0..args.trials {
        let act = random_bag(rng, spec.uses_weights());
        let y = pool_forward(&act, spec)?;
        let mut analytic = pool_backward(&act, spec, y)?;
        if args.corrupt && trial == 0 {
            analytic.d_probs[0] += 0.5;
        }
        worst = worst.max(finite_diff_deviation(&act, spec, args.step, &analytic)?);
    }
    Ok(worst)
}

fn model_check(spec: &PoolingSpec, args: &GradcheckArgs, rng: &mut ChaCha8Rng) -> anyhow::Result<Real> {
    let mut worst: Real = 0.0;
    for _ in 0..args.trials.min(3) {
        let frames = rng.random_range(2..=5);
        let bag = Bag {
            id: "gradcheck".into(),
            features: Array2::from_shape_fn((frames, 4), |_| rng.random_range(-1.0..1.0)),
            bag_labels: vec![1, 0],
            frame_labels: None,
        };
        let params = ModelParams::init(4, 2, 1, &[5], rng.random());
        worst = worst.max(model_grad_check(&params, &bag, spec, args.step)?);
    }
    Ok(worst)
}

/// Runs the gradient checks for the selected pooling functions.
pub fn run_gradcheck(args: &GradcheckArgs) -> anyhow::Result<GradcheckReport> {
    if !(args.step > 0.0 && args.step.is_finite()) {
        return Err(crate::UsageError("--step must be a positive finite number".into()).into());
    }
    let specs: Vec<PoolingSpec> = match args.pooling.resolve()? {
        Some(spec) => vec![spec],
        None => PoolingSpec::FIVE
            .into_iter()
            .chain(GENERALIZED_SETTINGS.iter().map(|&(alpha, beta)| {
                PoolingSpec::generalized(alpha, beta).expect("fixed settings are valid")
            }))
            .collect(),
    };
    let mut report = GradcheckReport::default();
    if args.trials == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for spec in specs {
        let pool_deviation = pool_check(&spec, args, &mut rng)?;
        let model_deviation = model_check(&spec, args, &mut rng)?;
        report.entries.push(GradcheckEntry { pooling: spec, pool_deviation, model_deviation });
    }
    Ok(report)
}
