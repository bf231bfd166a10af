//! Bags, the line-delimited dataset format, and model checkpoints.
//!
//! A dataset is UTF-8 text with one self-describing JSON object per line;
//! feature matrices are stored flat in row-major order with their dimensions
//! declared alongside. Frame-level labels are optional and are only ever read
//! by evaluation, never by training.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelParams;
use crate::train::TrainConfig;
use crate::Real;

/// Errors from dataset and checkpoint I/O.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("checkpoint: {0}")]
    CheckpointJson(#[from] serde_json::Error),
    #[error("record {id}: declared {expected} values, found {found}")]
    BadShape { id: String, expected: usize, found: usize },
    #[error("record {id}: bag label for class {class} disagrees with frame labels")]
    SmiViolation { id: String, class: usize },
    #[error("unsupported checkpoint format {0:?}")]
    BadCheckpointFormat(String),
}

/// One weakly labeled recording: a bag of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: String,
    /// Frame features, frames x dims.
    pub features: Array2<Real>,
    /// Weak labels, one per class.
    pub bag_labels: Vec<u8>,
    /// Frame-level truth (frames x classes); evaluation only.
    pub frame_labels: Option<Array2<u8>>,
}

impl Bag {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.bag_labels.len()
    }

    /// Checks the standard multiple-instance consistency: a bag label is
    /// positive iff some frame of that class is positive.
    pub fn validate(&self) -> Result<(), DataError> {
        if let Some(frame_labels) = &self.frame_labels {
            for (class, &bag_label) in self.bag_labels.iter().enumerate() {
                let any_frame = frame_labels.column(class).iter().any(|&t| t == 1);
                if any_frame != (bag_label == 1) {
                    return Err(DataError::SmiViolation { id: self.id.clone(), class });
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BagRecord {
    id: String,
    frames: usize,
    dim: usize,
    classes: usize,
    features: Vec<Real>,
    bag_labels: Vec<u8>,
    frame_labels: Option<Vec<u8>>,
}

impl BagRecord {
    fn from_bag(bag: &Bag) -> Self {
        Self {
            id: bag.id.clone(),
            frames: bag.frames(),
            dim: bag.dim(),
            classes: bag.classes(),
            features: bag.features.iter().copied().collect(),
            bag_labels: bag.bag_labels.clone(),
            frame_labels: bag.frame_labels.as_ref().map(|m| m.iter().copied().collect()),
        }
    }

    fn into_bag(self) -> Result<Bag, DataError> {
        let expected = self.frames * self.dim;
        if self.features.len() != expected || self.bag_labels.len() != self.classes {
            return Err(DataError::BadShape { id: self.id, expected, found: self.features.len() });
        }
        let features = Array2::from_shape_vec((self.frames, self.dim), self.features)
            .expect("length checked above");
        let frame_labels = match self.frame_labels {
            None => None,
            Some(flat) => {
                if flat.len() != self.frames * self.classes {
                    return Err(DataError::BadShape {
                        id: self.id,
                        expected: self.frames * self.classes,
                        found: flat.len(),
                    });
                }
                Some(Array2::from_shape_vec((self.frames, self.classes), flat).expect("length checked"))
            }
        };
        let bag = Bag { id: self.id, features, bag_labels: self.bag_labels, frame_labels };
        bag.validate()?;
        Ok(bag)
    }
}

/// Writes bags as one JSON object per line.
pub fn write_bags<W: Write>(writer: &mut W, bags: &[Bag]) -> Result<(), DataError> {
    for bag in bags {
        let record = BagRecord::from_bag(bag);
        serde_json::to_writer(&mut *writer, &record).map_err(DataError::CheckpointJson)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads line-delimited bags, validating shapes and SMI consistency.
pub fn read_bags<R: BufRead>(reader: R) -> Result<Vec<Bag>, DataError> {
    let mut bags = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BagRecord =
            serde_json::from_str(&line).map_err(|source| DataError::Json { line: idx + 1, source })?;
        bags.push(record.into_bag()?);
    }
    Ok(bags)
}

pub fn save_dataset(path: &Path, bags: &[Bag]) -> Result<(), DataError> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_bags(&mut writer, bags)?;
    writer.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Bag>, DataError> {
    read_bags(BufReader::new(File::open(path)?))
}

const CHECKPOINT_FORMAT: &str = "milpool-checkpoint-v1";

/// A trained model: config echo (including the seed) plus all parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, params: ModelParams) -> Self {
        Self { format: CHECKPOINT_FORMAT.to_string(), config, params }
    }
}

/// Serializes a checkpoint; save -> load -> save is byte-identical.
pub fn checkpoint_to_string(checkpoint: &Checkpoint) -> String {
    serde_json::to_string_pretty(checkpoint).expect("checkpoint serialization cannot fail")
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), DataError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(checkpoint_to_string(checkpoint).as_bytes())?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    if checkpoint.format != CHECKPOINT_FORMAT {
        return Err(DataError::BadCheckpointFormat(checkpoint.format));
    }
    Ok(checkpoint)
}
