//! The `compare` command: train one model per pooling function with a shared
//! config and seed, tune thresholds on validation, evaluate on test, and
//! write per-system reports, frame-probability traces, and a combined table.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use milpool_core::dataset::{load_dataset, save_checkpoint, Bag, Checkpoint};
use milpool_core::eval::{bag_label_matrix, evaluate, recording_probs, EvalOptions};
use milpool_core::metrics::{tune_thresholds, EvalReport, Thresholds};
use milpool_core::model::frame_forward;
use milpool_core::pooling::PoolingSpec;
use milpool_core::train::{train, TrainConfig, TrainOutput};
use milpool_core::Real;
use serde::Serialize;

use crate::commands::split_path;
use crate::config::{resolve_train_config, TrainFlags};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Dataset directory holding train.jsonl, validation.jsonl, test.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file (flags take precedence over it).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frames aggregated into one segment.
    #[arg(long, default_value_t = 10)]
    pub segment_frames: usize,
    #[command(flatten)]
    pub train: TrainFlags,
}

/// One trained-and-evaluated system.
#[derive(Serialize)]
pub struct SystemResult {
    pub column: String,
    pub pooling: PoolingSpec,
    pub thresholds: Vec<Real>,
    pub loss_trace: Vec<Real>,
    pub report: EvalReport,
}

#[derive(Serialize)]
pub struct CompareOutput {
    pub config: TrainConfig,
    pub segment_frames: usize,
    pub columns: Vec<String>,
    pub systems: Vec<SystemResult>,
}

fn train_five(bags: &[Bag], base: &TrainConfig) -> anyhow::Result<Vec<(PoolingSpec, TrainOutput)>> {
    // Independent seeded jobs; join order fixes the output order.
    let results: Vec<anyhow::Result<TrainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = PoolingSpec::FIVE
            .iter()
            .map(|&pooling| {
                let config = TrainConfig { pooling, ..base.clone() };
                scope.spawn(move || train(bags, &config).map_err(anyhow::Error::from))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    PoolingSpec::FIVE
        .iter()
        .zip(results)
        .map(|(&spec, result)| result.map(|out| (spec, out)))
        .collect()
}

/// One plot-ready trace per recording and class: the frame probabilities,
/// the attention weights when the system has them, and the frame truth.
#[derive(Serialize)]
struct TraceLine<'a> {
    id: &'a str,
    class: usize,
    probs: Vec<Real>,
    weights: Option<Vec<Real>>,
    frame_labels: Option<Vec<u8>>,
}

fn write_traces(
    path: &Path,
    params: &milpool_core::model::ModelParams,
    spec: &PoolingSpec,
    bags: &[Bag],
) -> anyhow::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for bag in bags {
        let (probs, weights) = frame_forward(params, bag)?;
        for class in 0..params.classes {
            let line = TraceLine {
                id: &bag.id,
                class,
                probs: probs.column(class).iter().copied().collect(),
                weights: spec
                    .uses_weights()
                    .then(|| weights.column(class).iter().copied().collect()),
                frame_labels: bag
                    .frame_labels
                    .as_ref()
                    .map(|fl| fl.column(class).iter().copied().collect()),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn pct(x: Real) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Renders the combined table, one column per pooling function, rows
/// mirroring the tagging / localization / error-breakdown blocks.
fn render_table(output: &CompareOutput) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let reports: Vec<&EvalReport> = output.systems.iter().map(|s| &s.report).collect();
    let row = |label: &str, cells: Vec<String>| (label.to_string(), cells);

    rows.push(row("Audio Tagging", vec![]));
    rows.push(row("  TP", reports.iter().map(|r| r.tagging.true_positives.to_string()).collect()));
    rows.push(row("  FN", reports.iter().map(|r| r.tagging.false_negatives.to_string()).collect()));
    rows.push(row("  FP", reports.iter().map(|r| r.tagging.false_positives.to_string()).collect()));
    rows.push(row("  Precision", reports.iter().map(|r| pct(r.tagging.precision)).collect()));
    rows.push(row("  Recall", reports.iter().map(|r| pct(r.tagging.recall)).collect()));
    rows.push(row("  F1", reports.iter().map(|r| pct(r.tagging.f1)).collect()));
    rows.push(row("Localization", vec![]));
    rows.push(row("  TP", reports.iter().map(|r| r.segment.counts.true_positives.to_string()).collect()));
    rows.push(row("  FN", reports.iter().map(|r| r.segment.counts.false_negatives.to_string()).collect()));
    rows.push(row("  FP", reports.iter().map(|r| r.segment.counts.false_positives.to_string()).collect()));
    rows.push(row("  Precision", reports.iter().map(|r| pct(r.segment.precision)).collect()));
    rows.push(row("  Recall", reports.iter().map(|r| pct(r.segment.recall)).collect()));
    rows.push(row("  F1", reports.iter().map(|r| pct(r.segment.f1)).collect()));
    rows.push(row("  Sub", reports.iter().map(|r| r.segment.counts.substitutions.to_string()).collect()));
    rows.push(row("  Del", reports.iter().map(|r| r.segment.counts.deletions.to_string()).collect()));
    rows.push(row("  Ins", reports.iter().map(|r| r.segment.counts.insertions.to_string()).collect()));
    rows.push(row("  Error Rate", reports.iter().map(|r| pct(r.segment.error_rate)).collect()));
    rows.push(row("Ranking", vec![]));
    rows.push(row("  MAP", reports.iter().map(|r| format!("{:.3}", r.ranking.map)).collect()));
    rows.push(row("  MAUC", reports.iter().map(|r| format!("{:.3}", r.ranking.mauc)).collect()));
    rows.push(row("  d'", reports.iter().map(|r| format!("{:.3}", r.ranking.d_prime)).collect()));

    let mut text = String::new();
    text.push_str(&format!("{:<16}", ""));
    for column in &output.columns {
        text.push_str(&format!("{column:>15}"));
    }
    text.push('\n');
    for (label, cells) in rows {
        text.push_str(&format!("{label:<16}"));
        for cell in cells {
            text.push_str(&format!("{cell:>15}"));
        }
        text.push('\n');
    }
    text
}

/// Trains, tunes, and evaluates all five pooling functions; writes
/// checkpoints, reports, thresholds, traces, and the comparison table.
pub fn run_compare(args: &CompareArgs) -> anyhow::Result<CompareOutput> {
    let config = resolve_train_config(args.config.as_deref(), &args.train)?;
    let train_bags = load_dataset(&split_path(&args.data, "train")?)?;
    let val_bags = load_dataset(&split_path(&args.data, "validation")?)?;
    let test_bags = load_dataset(&split_path(&args.data, "test")?)?;
    std::fs::create_dir_all(&args.out)?;

    let trained = train_five(&train_bags, &config)?;
    let val_labels = bag_label_matrix(&val_bags);
    let options = EvalOptions { frames_per_segment: args.segment_frames, segment_pooling: None };

    let mut systems = Vec::with_capacity(trained.len());
    for (spec, out) in trained {
        let val_probs = recording_probs(&out.params, &val_bags, &spec)?;
        let thresholds = tune_thresholds(&val_probs, &val_labels);
        let report = evaluate(&out.params, &test_bags, &spec, &thresholds, &options)?;

        let label = spec.label();
        save_checkpoint(
            &args.out.join(format!("checkpoint_{label}.json")),
            &Checkpoint::new(TrainConfig { pooling: spec, ..config.clone() }, out.params.clone()),
        )?;
        write_traces(&args.out.join(format!("traces_{label}.jsonl")), &out.params, &spec, &test_bags)?;

        systems.push(SystemResult {
            column: spec.column_name().to_string(),
            pooling: spec,
            thresholds: thresholds.0.clone(),
            loss_trace: out.loss_trace,
            report,
        });
        let report_json = serde_json::to_string_pretty(&SystemReportFile {
            pooling: spec,
            config: TrainConfig { pooling: spec, ..config.clone() },
            segment_frames: args.segment_frames,
            thresholds: Thresholds(systems.last().unwrap().thresholds.clone()),
            report: &systems.last().unwrap().report,
        })?;
        std::fs::write(args.out.join(format!("report_{label}.json")), report_json + "\n")?;
    }

    let output = CompareOutput {
        config,
        segment_frames: args.segment_frames,
        columns: systems.iter().map(|s| s.column.clone()).collect(),
        systems,
    };
    std::fs::write(args.out.join("comparison.json"), serde_json::to_string_pretty(&output)? + "\n")?;
    std::fs::write(args.out.join("comparison.txt"), render_table(&output))?;
    Ok(output)
}

#[derive(Serialize)]
struct SystemReportFile<'a> {
    pooling: PoolingSpec,
    config: TrainConfig,
    segment_frames: usize,
    thresholds: Thresholds,
    report: &'a EvalReport,
}
