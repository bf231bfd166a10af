//! Flag groups and config resolution: flags > config file > defaults.

use std::path::Path;

use clap::{Args, ValueEnum};
use milpool_core::pooling::PoolingSpec;
use milpool_core::synth::SynthConfig;
use milpool_core::train::TrainConfig;
use milpool_core::Real;
use serde::Deserialize;

use crate::UsageError;

/// Pooling function selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Max,
    Average,
    LinearSoftmax,
    ExpSoftmax,
    Attention,
    Generalized,
}

/// `--pooling` plus the generalized-family parameters.
#[derive(Debug, Clone, Default, Args)]
pub struct PoolingFlags {
    /// Pooling function aggregating frame probabilities.
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    /// Exponential weighting strength (generalized pooling only).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Power weighting exponent, >= 0 (generalized pooling only).
    #[arg(long)]
    pub beta: Option<f64>,
}

impl PoolingFlags {
    /// Turns the flag group into a pooling spec; `--alpha`/`--beta` are only
    /// legal together with `--pooling generalized`.
    pub fn resolve(&self) -> Result<Option<PoolingSpec>, UsageError> {
        match self.pooling {
            Some(PoolingArg::Generalized) => {
                let (Some(alpha), Some(beta)) = (self.alpha, self.beta) else {
                    return Err(UsageError(
                        "--pooling generalized requires both --alpha and --beta".into(),
                    ));
                };
                let spec = PoolingSpec::generalized(alpha, beta)
                    .map_err(|e| UsageError(e.to_string()))?;
                Ok(Some(spec))
            }
            other => {
                if self.alpha.is_some() || self.beta.is_some() {
                    return Err(UsageError(
                        "--alpha/--beta are only valid with --pooling generalized".into(),
                    ));
                }
                Ok(other.map(|arg| match arg {
                    PoolingArg::Max => PoolingSpec::Max,
                    PoolingArg::Average => PoolingSpec::Average,
                    PoolingArg::LinearSoftmax => PoolingSpec::LinearSoftmax,
                    PoolingArg::ExpSoftmax => PoolingSpec::ExpSoftmax,
                    PoolingArg::Attention => PoolingSpec::Attention,
                    PoolingArg::Generalized => unreachable!("handled above"),
                }))
            }
        }
    }
}

/// Training hyperparameter flags; unset flags fall back to the config file
/// and then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[command(flatten)]
    pub pooling: PoolingFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<Real>,
    #[arg(long)]
    pub momentum: Option<Real>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Class-balanced minibatch sampling (true/false).
    #[arg(long)]
    pub balancing: Option<bool>,
    /// Frames of context on each side of the scored frame.
    #[arg(long)]
    pub context_radius: Option<usize>,
    /// Hidden layer sizes, comma separated (e.g. 16,8).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

/// Config-file counterpart of [`TrainFlags`]; all fields optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPatch {
    pub pooling: Option<PoolingSpec>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<Real>,
    pub momentum: Option<Real>,
    pub seed: Option<u64>,
    pub balancing: Option<bool>,
    pub context_radius: Option<usize>,
    pub hidden_sizes: Option<Vec<usize>>,
}

fn read_patch<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config file {}: {e}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("bad config file {}: {e}", path.display()))
}

/// Resolves a training config from defaults, an optional JSON config file,
/// and the flag group, in increasing precedence.
pub fn resolve_train_config(file: Option<&Path>, flags: &TrainFlags) -> anyhow::Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = file {
        let patch: TrainPatch = read_patch(path)?;
        apply_option(&mut config.pooling, patch.pooling);
        apply_option(&mut config.epochs, patch.epochs);
        apply_option(&mut config.batch_size, patch.batch_size);
        apply_option(&mut config.learning_rate, patch.learning_rate);
        apply_option(&mut config.momentum, patch.momentum);
        apply_option(&mut config.seed, patch.seed);
        apply_option(&mut config.balancing, patch.balancing);
        apply_option(&mut config.context_radius, patch.context_radius);
        apply_option(&mut config.hidden_sizes, patch.hidden_sizes);
    }
    apply_option(&mut config.pooling, flags.pooling.resolve()?);
    apply_option(&mut config.epochs, flags.epochs);
    apply_option(&mut config.batch_size, flags.batch_size);
    apply_option(&mut config.learning_rate, flags.learning_rate);
    apply_option(&mut config.momentum, flags.momentum);
    apply_option(&mut config.seed, flags.seed);
    apply_option(&mut config.balancing, flags.balancing);
    apply_option(&mut config.context_radius, flags.context_radius);
    apply_option(&mut config.hidden_sizes, flags.hidden.clone());
    config.validate()?;
    Ok(config)
}

/// Corpus shape flags for `generate`.
#[derive(Debug, Clone, Default, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature dimensionality.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Frames per recording.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub train_recordings: Option<usize>,
    #[arg(long)]
    pub val_recordings: Option<usize>,
    #[arg(long)]
    pub test_recordings: Option<usize>,
    #[arg(long)]
    pub min_duration: Option<usize>,
    #[arg(long)]
    pub max_duration: Option<usize>,
    #[arg(long)]
    pub max_events: Option<usize>,
    #[arg(long)]
    pub max_distractors: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<Real>,
    /// Fraction of each event ramped in/out at its edges.
    #[arg(long)]
    pub edge_ramp: Option<Real>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Config-file counterpart of [`SynthFlags`].
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthPatch {
    pub classes: Option<usize>,
    pub feature_dim: Option<usize>,
    pub frames: Option<usize>,
    pub train_recordings: Option<usize>,
    pub val_recordings: Option<usize>,
    pub test_recordings: Option<usize>,
    pub min_duration: Option<usize>,
    pub max_duration: Option<usize>,
    pub max_events: Option<usize>,
    pub max_distractors: Option<usize>,
    pub noise_scale: Option<Real>,
    pub amp_range: Option<(Real, Real)>,
    pub edge_ramp: Option<Real>,
    pub seed: Option<u64>,
}

pub fn resolve_synth_config(file: Option<&Path>, flags: &SynthFlags) -> anyhow::Result<SynthConfig> {
    let mut config = SynthConfig::default();
    if let Some(path) = file {
        let patch: SynthPatch = read_patch(path)?;
        apply_option(&mut config.classes, patch.classes);
        apply_option(&mut config.feature_dim, patch.feature_dim);
        apply_option(&mut config.frames, patch.frames);
        apply_option(&mut config.train_recordings, patch.train_recordings);
        apply_option(&mut config.val_recordings, patch.val_recordings);
        apply_option(&mut config.test_recordings, patch.test_recordings);
        apply_option(&mut config.min_duration, patch.min_duration);
        apply_option(&mut config.max_duration, patch.max_duration);
        apply_option(&mut config.max_events, patch.max_events);
        apply_option(&mut config.max_distractors, patch.max_distractors);
        apply_option(&mut config.noise_scale, patch.noise_scale);
        apply_option(&mut config.amp_range, patch.amp_range);
        apply_option(&mut config.edge_ramp, patch.edge_ramp);
        apply_option(&mut config.seed, patch.seed);
    }
    apply_option(&mut config.classes, flags.classes);
    apply_option(&mut config.feature_dim, flags.dim);
    apply_option(&mut config.frames, flags.frames);
    apply_option(&mut config.train_recordings, flags.train_recordings);
    apply_option(&mut config.val_recordings, flags.val_recordings);
    apply_option(&mut config.test_recordings, flags.test_recordings);
    apply_option(&mut config.min_duration, flags.min_duration);
    apply_option(&mut config.max_duration, flags.max_duration);
    apply_option(&mut config.max_events, flags.max_events);
    apply_option(&mut config.max_distractors, flags.max_distractors);
    apply_option(&mut config.noise_scale, flags.noise_scale);
    apply_option(&mut config.edge_ramp, flags.edge_ramp);
    apply_option(&mut config.seed, flags.seed);
    config.validate()?;
    Ok(config)
}

fn apply_option<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_without_generalized_is_a_usage_error() {
        let flags = PoolingFlags { pooling: Some(PoolingArg::Max), alpha: Some(1.0), beta: None };
        assert!(flags.resolve().is_err());
        let flags = PoolingFlags { pooling: None, alpha: None, beta: Some(1.0) };
        assert!(flags.resolve().is_err());
    }

    #[test]
    fn generalized_requires_both_parameters() {
        let flags = PoolingFlags { pooling: Some(PoolingArg::Generalized), alpha: Some(1.0), beta: None };
        assert!(flags.resolve().is_err());
        let flags =
            PoolingFlags { pooling: Some(PoolingArg::Generalized), alpha: Some(1.0), beta: Some(0.5) };
        assert_eq!(
            flags.resolve().unwrap(),
            Some(PoolingSpec::Generalized { alpha: 1.0, beta: 0.5 })
        );
    }

    #[test]
    fn flags_override_config_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"epochs": 5, "seed": 99, "pooling": {"kind": "max"}}"#).unwrap();
        let flags = TrainFlags { epochs: Some(8), ..TrainFlags::default() };
        let config = resolve_train_config(Some(&path), &flags).unwrap();
        assert_eq!(config.epochs, 8, "flag wins");
        assert_eq!(config.seed, 99, "file beats default");
        assert_eq!(config.pooling, PoolingSpec::Max);
        assert_eq!(config.batch_size, TrainConfig::default().batch_size, "default survives");
    }
}
