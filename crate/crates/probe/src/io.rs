//! On-disk formats.
//!
//! A dataset is JSON Lines: a header object on line 1, then one trajectory
//! per line. A checkpoint is a single JSON object. Both carry a format tag,
//! a version and the digest of the config that produced them. Floats are
//! written in their shortest exact form, so reading back gives the same
//! `f64` bit patterns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use probe_core::dataset::{Dataset, Trajectory};
use probe_core::model::TrainState;
use probe_core::worldsim::DT;
use serde::{Deserialize, Serialize};

use crate::Error;

pub const DATASET_FORMAT: &str = "probe-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "probe-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub length: String,
    pub angle: String,
    pub force: String,
    pub torque: String,
    /// Simulation tick in seconds.
    pub tick: f64,
}

impl Default for Units {
    fn default() -> Self {
        Units { length: "m".into(), angle: "rad".into(), force: "N".into(), torque: "N m".into(), tick: DT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub units: Units,
    pub stride: u32,
    /// Number of trajectory lines that follow.
    pub count: usize,
}

impl DatasetHeader {
    pub fn new(config_digest: &str, dataset: &Dataset) -> Self {
        DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            config_digest: config_digest.into(),
            units: Units::default(),
            stride: dataset.stride,
            count: dataset.trajectories.len(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_dataset(path: &Path, config_digest: &str, dataset: &Dataset) -> Result<(), Error> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| Error::io(path, e);
    serde_json::to_writer(&mut w, &DatasetHeader::new(config_digest, dataset)).map_err(|e| io(e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for t in &dataset.trajectories {
        serde_json::to_writer(&mut w, t).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn check_tag(
    path: &Path,
    format: &str,
    version: u32,
    want_format: &'static str,
    want_version: u32,
) -> Result<(), Error> {
    if format != want_format {
        return Err(Error::Format { path: path.display().to_string(), expected: want_format, found: format.into() });
    }
    if version != want_version {
        return Err(Error::Version { path: path.display().to_string(), expected: want_version, found: version });
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Dataset), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(path, &text)
}

/// Parses dataset text; `path` is only used in messages.
pub fn parse_dataset(path: &Path, text: &str) -> Result<(DatasetHeader, Dataset), Error> {
    let shown = || path.display().to_string();
    let parse_err = |line: usize, e: serde_json::Error| Error::Parse { path: shown(), line, message: e.to_string() };
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or_else(|| Error::Truncated { path: shown(), detail: "empty file".into() })?;
    let header: DatasetHeader = serde_json::from_str(first).map_err(|e| parse_err(1, e))?;
    check_tag(path, &header.format, header.version, DATASET_FORMAT, DATASET_VERSION)?;

    let mut trajectories = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let number = i + 2;
        if !line.ends_with('\n') {
            return Err(Error::Truncated { path: shown(), detail: format!("line {number} has no line end") });
        }
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(line).map_err(|e| parse_err(number, e))?;
        trajectories.push(t);
    }
    if trajectories.len() != header.count {
        return Err(Error::Truncated {
            path: shown(),
            detail: format!("header announces {} trajectories, found {}", header.count, trajectories.len()),
        });
    }
    let stride = header.stride;
    Ok((header, Dataset { stride, trajectories }))
}

/// What a checkpoint predicts with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "lowercase")]
pub enum Predictor {
    /// Trained parameters plus optimizer state for resuming.
    Orm(Box<TrainState>),
    /// Replays the labels; used to test the evaluation and rendering plumbing.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    /// Seed of the held-out split the model was monitored on.
    pub split_seed: u64,
    pub predictor: Predictor,
}

impl Checkpoint {
    pub fn new(config_digest: &str, split_seed: u64, predictor: Predictor) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_digest: config_digest.into(),
            split_seed,
            predictor,
        }
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), Error> {
    write_json(path, checkpoint)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(path, &text)
}

pub fn parse_checkpoint(path: &Path, text: &str) -> Result<Checkpoint, Error> {
    let shown = || path.display().to_string();
    #[derive(Deserialize)]
    struct Tag {
        format: String,
        version: u32,
    }
    let parse_err = |e: serde_json::Error| {
        if e.is_eof() {
            Error::Truncated { path: shown(), detail: format!("JSON ends early at line {}", e.line()) }
        } else {
            Error::Parse { path: shown(), line: e.line(), message: e.to_string() }
        }
    };
    let tag: Tag = serde_json::from_str(text).map_err(parse_err)?;
    check_tag(path, &tag.format, tag.version, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)?;
    serde_json::from_str(text).map_err(parse_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
