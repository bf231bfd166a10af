//! The `generate`, `train`, and `eval` commands.

use std::path::{Path, PathBuf};

use clap::Args;
use milpool_core::dataset::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, Bag, Checkpoint,
};
use milpool_core::eval::{bag_label_matrix, evaluate, recording_probs, EvalOptions};
use milpool_core::metrics::{tune_thresholds, EvalReport, Thresholds};
use milpool_core::pooling::PoolingSpec;
use milpool_core::synth::{generate, SynthConfig, SPLIT_NAMES};
use milpool_core::train::{train, TrainConfig};
use milpool_core::Real;
use serde::{Deserialize, Serialize};

use crate::config::{resolve_synth_config, resolve_train_config, PoolingFlags, SynthFlags, TrainFlags};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory for the three splits and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file (flags take precedence over it).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthFlags,
}

/// Sidecar manifest echoing the corpus config.
#[derive(Serialize, Deserialize)]
struct Manifest {
    config: SynthConfig,
}

/// Generates a synthetic corpus and writes `train.jsonl`,
/// `validation.jsonl`, `test.jsonl`, and `manifest.json`.
pub fn run_generate(args: &GenerateArgs) -> anyhow::Result<SynthConfig> {
    let config = resolve_synth_config(args.config.as_deref(), &args.synth)?;
    let corpus = generate(&config)?;
    std::fs::create_dir_all(&args.out)?;
    for (name, split) in SPLIT_NAMES.iter().zip([&corpus.train, &corpus.validation, &corpus.test]) {
        save_dataset(&args.out.join(format!("{name}.jsonl")), split)?;
    }
    let manifest = serde_json::to_string_pretty(&Manifest { config: config.clone() })?;
    std::fs::write(args.out.join("manifest.json"), manifest + "\n")?;
    Ok(config)
}

/// Resolves a `--data` argument to one split file: either the file itself or
/// `<dir>/<split>.jsonl`.
pub fn split_path(data: &Path, split: &str) -> anyhow::Result<PathBuf> {
    let path = if data.is_dir() { data.join(format!("{split}.jsonl")) } else { data.to_path_buf() };
    if !path.is_file() {
        anyhow::bail!("missing split {split}: no dataset at {}", path.display());
    }
    Ok(path)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (uses train.jsonl) or a dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file (flags take precedence over it).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

/// Trains one model and writes a checkpoint.
pub fn run_train(args: &TrainArgs) -> anyhow::Result<Checkpoint> {
    let config = resolve_train_config(args.config.as_deref(), &args.train)?;
    let bags = load_dataset(&split_path(&args.data, "train")?)?;
    let output = train(&bags, &config)?;
    let checkpoint = Checkpoint::new(config, output.params);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(&args.out, &checkpoint)?;
    println!(
        "trained {} for {} epochs: mean bag loss {:.4} -> {:.4}",
        checkpoint.config.pooling,
        checkpoint.config.epochs,
        output.loss_trace.first().copied().unwrap_or(Real::NAN),
        output.loss_trace.last().copied().unwrap_or(Real::NAN),
    );
    Ok(checkpoint)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory (uses test.jsonl) or a dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Thresholds file; when absent, thresholds are tuned on the evaluated
    /// split itself (and noted in the output).
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Frames aggregated into one segment.
    #[arg(long, default_value_t = 10)]
    pub segment_frames: usize,
    /// Pooling used within segments (default: the training pooling).
    #[command(flatten)]
    pub segment_pooling: PoolingFlags,
    /// Write the report JSON here (it is always printed).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Thresholds file schema.
#[derive(Serialize, Deserialize)]
pub struct ThresholdsFile {
    pub thresholds: Vec<Real>,
}

/// Full eval output: config echo plus the report.
#[derive(Serialize)]
pub struct EvalOutput {
    pub config: TrainConfig,
    pub segment_frames: usize,
    pub segment_pooling: PoolingSpec,
    pub thresholds: Vec<Real>,
    /// Where the thresholds came from: "file" or "tuned-on-eval-split".
    pub thresholds_source: String,
    pub report: EvalReport,
}

/// Evaluates a checkpoint on a strongly labeled split.
pub fn run_eval(args: &EvalArgs) -> anyhow::Result<EvalOutput> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let bags: Vec<Bag> = load_dataset(&split_path(&args.data, "test")?)?;
    let spec = checkpoint.config.pooling;

    let (thresholds, thresholds_source) = match &args.thresholds {
        Some(path) => {
            let file: ThresholdsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            (Thresholds(file.thresholds), "file".to_string())
        }
        None => {
            let probs = recording_probs(&checkpoint.params, &bags, &spec)?;
            let labels = bag_label_matrix(&bags);
            (tune_thresholds(&probs, &labels), "tuned-on-eval-split".to_string())
        }
    };

    let options = EvalOptions {
        frames_per_segment: args.segment_frames,
        segment_pooling: args.segment_pooling.resolve()?,
    };
    let report = evaluate(&checkpoint.params, &bags, &spec, &thresholds, &options)?;
    let output = EvalOutput {
        segment_pooling: options.segment_pooling.unwrap_or(spec),
        config: checkpoint.config,
        segment_frames: args.segment_frames,
        thresholds: thresholds.0,
        thresholds_source,
        report,
    };
    println!("{}", output.report);
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, serde_json::to_string_pretty(&output)? + "\n")?;
    }
    Ok(output)
}
