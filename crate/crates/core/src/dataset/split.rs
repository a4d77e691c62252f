//! Time-block train/test split, validation-trajectory carving, and on-disk layout.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::car_sim::{read_log_csv, write_log_csv, BodyVelocity, CarPose, CollectedLog, ControlInput, LogRecord};
use crate::error::{Error, Result};

use super::pairs::{build_pairs, local_velocities, PoseLog, SmoothingConfig, TrainingPair};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Leading fraction of frames used for training pairs.
    pub train_fraction: f64,
    /// Following fraction used for test pairs; the remainder is held out for validation.
    pub test_fraction: f64,
    pub validation_count: usize,
    /// Steps per validation trajectory (frames = steps + 1).
    pub validation_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 15.0 / 18.0,
            test_fraction: 1.0 / 18.0,
            validation_count: 40,
            validation_steps: 60,
            seed: 0,
            smoothing: SmoothingConfig::default(),
        }
    }
}

/// An open-loop replay case: start state, recorded commands, recorded poses.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationTrajectory {
    /// `steps + 1` records; the last record's command is never replayed.
    pub records: Vec<LogRecord>,
    pub v0: BodyVelocity,
}

impl ValidationTrajectory {
    pub fn steps(&self) -> usize {
        self.records.len() - 1
    }

    pub fn x0(&self) -> CarPose {
        self.records[0].pose
    }

    pub fn final_pose(&self) -> CarPose {
        self.records[self.steps()].pose
    }

    pub fn controls(&self) -> Vec<ControlInput> {
        self.records[..self.steps()].iter().map(|r| r.control).collect()
    }

    /// Builds a trajectory from a recorded segment, estimating `v0` from the poses.
    pub fn from_records_estimated(records: Vec<LogRecord>, smoothing: &SmoothingConfig) -> Result<Self> {
        let log = PoseLog::from_records(&records)?;
        let v0 = local_velocities(&log, smoothing)?[0];
        Ok(Self { records, v0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub h: f64,
    pub train: Vec<TrainingPair>,
    pub test: Vec<TrainingPair>,
    pub validation: Vec<ValidationTrajectory>,
    pub train_frames: Range<usize>,
    pub test_frames: Range<usize>,
    pub validation_frames: Vec<Range<usize>>,
}

fn fraction_count(total: usize, f: f64) -> usize {
    ((total as f64) * f + 1e-9).floor() as usize
}

/// Picks `count` windows of `steps + 1` frames (stride `steps`) from `segment`.
pub fn carve_validation(
    log: &CollectedLog,
    segment: Range<usize>,
    count: usize,
    steps: usize,
    seed: u64,
) -> Result<(Vec<ValidationTrajectory>, Vec<Range<usize>>)> {
    if count == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("validation_steps must be >= 1".into()));
    }
    let frames = segment.len();
    let slots = if frames > steps { (frames - 1) / steps } else { 0 };
    if slots < count {
        return Err(Error::InsufficientData(format!(
            "{count} validation trajectories of {steps} steps need {} frames ({:.1} s), held-out segment has {frames}",
            count * steps + 1,
            (count * steps) as f64 * log.h,
        )));
    }
    let mut order: Vec<usize> = (0..slots).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();

    let mut trajs = Vec::with_capacity(count);
    let mut ranges = Vec::with_capacity(count);
    for slot in chosen {
        let start = segment.start + slot * steps;
        let range = start..start + steps + 1;
        let t0 = log.records[start].t;
        let records = log.records[range.clone()]
            .iter()
            .map(|r| LogRecord { t: r.t - t0, ..*r })
            .collect();
        trajs.push(ValidationTrajectory {
            records,
            v0: log.velocities[start],
        });
        ranges.push(range);
    }
    Ok((trajs, ranges))
}

/// Splits a collected log into time-contiguous train, test and held-out blocks.
pub fn split_dataset(log: &CollectedLog, cfg: &SplitConfig) -> Result<SplitDataset> {
    let n = log.records.len();
    let (ft, fs) = (cfg.train_fraction, cfg.test_fraction);
    if !(ft > 0.0 && fs >= 0.0 && ft + fs <= 1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "split fractions must be positive and sum to <= 1 (train {ft}, test {fs})"
        )));
    }
    let n_train = fraction_count(n, ft);
    let n_test = fraction_count(n, fs).min(n - n_train);
    if n_train < 3 {
        return Err(Error::InsufficientData(format!("only {n_train} training frames")));
    }
    let train_frames = 0..n_train;
    let test_frames = n_train..n_train + n_test;

    let block = |r: &Range<usize>| -> Result<Vec<TrainingPair>> {
        if r.len() < 3 {
            return Ok(Vec::new());
        }
        build_pairs(&PoseLog::from_records(&log.records[r.clone()])?, &cfg.smoothing)
    };
    let train = block(&train_frames)?;
    let test = block(&test_frames)?;
    let (validation, validation_frames) = carve_validation(
        log,
        test_frames.end..n,
        cfg.validation_count,
        cfg.validation_steps,
        cfg.seed,
    )?;
    Ok(SplitDataset {
        h: log.h,
        train,
        test,
        validation,
        train_frames,
        test_frames,
        validation_frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub h: f64,
    pub seed: u64,
    pub train_pairs: FileEntry,
    pub test_pairs: FileEntry,
    pub validation: Vec<ValidationEntry>,
    pub train_frames: [usize; 2],
    pub test_frames: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub path: String,
    /// Plant velocity at the first frame; estimated from poses when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<[f64; 3]>,
    pub frames: [usize; 2],
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<TrainingPair>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

impl SplitDataset {
    /// Writes pairs, validation CSVs and the manifest; returns every file written.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir.join("validation")).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();

        write_pairs_jsonl(&dir.join("train_pairs.jsonl"), &self.train)?;
        written.push(dir.join("train_pairs.jsonl"));
        write_pairs_jsonl(&dir.join("test_pairs.jsonl"), &self.test)?;
        written.push(dir.join("test_pairs.jsonl"));

        let mut validation = Vec::with_capacity(self.validation.len());
        for (i, (traj, range)) in self.validation.iter().zip(&self.validation_frames).enumerate() {
            let rel = format!("validation/val_{i:03}.csv");
            write_log_csv(dir.join(&rel), &traj.records)?;
            written.push(dir.join(&rel));
            validation.push(ValidationEntry {
                path: rel,
                v0: Some(traj.v0.to_array()),
                frames: [range.start, range.end],
            });
        }

        let manifest = DatasetManifest {
            format_version: 1,
            h: self.h,
            seed,
            train_pairs: FileEntry {
                path: "train_pairs.jsonl".into(),
                count: self.train.len(),
            },
            test_pairs: FileEntry {
                path: "test_pairs.jsonl".into(),
                count: self.test.len(),
            },
            validation,
            train_frames: [self.train_frames.start, self.train_frames.end],
            test_frames: [self.test_frames.start, self.test_frames.end],
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let train = read_pairs_jsonl(&dir.join(&manifest.train_pairs.path))?;
        let test = read_pairs_jsonl(&dir.join(&manifest.test_pairs.path))?;
        let mut validation = Vec::with_capacity(manifest.validation.len());
        let mut validation_frames = Vec::with_capacity(manifest.validation.len());
        for entry in &manifest.validation {
            let records = read_log_csv(dir.join(&entry.path))?;
            let traj = match entry.v0 {
                Some(v0) => ValidationTrajectory {
                    records,
                    v0: BodyVelocity::from_array(v0),
                },
                None => ValidationTrajectory::from_records_estimated(records, &SmoothingConfig::default())?,
            };
            validation.push(traj);
            validation_frames.push(entry.frames[0]..entry.frames[1]);
        }
        Ok(Self {
            h: manifest.h,
            train,
            test,
            validation,
            train_frames: manifest.train_frames[0]..manifest.train_frames[1],
            test_frames: manifest.test_frames[0]..manifest.test_frames[1],
            validation_frames,
        })
    }

    /// Fails with a message naming the manifest field when no validation set is present.
    pub fn require_validation(&self) -> Result<&[ValidationTrajectory]> {
        if self.validation.is_empty() {
            Err(Error::Config(
                "dataset manifest field `validation` lists no trajectories".into(),
            ))
        } else {
            Ok(&self.validation)
        }
    }
}

/// Convenience wrapper: split then persist.
pub fn split_and_save(log: &CollectedLog, cfg: &SplitConfig, dir: &Path) -> Result<SplitDataset> {
    let ds = split_dataset(log, cfg)?;
    ds.save(dir, cfg.seed)?;
    Ok(ds)
}
