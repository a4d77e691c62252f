use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use driftopt::car_sim::{collect_dataset_with, write_log_csv, ExcitationConfig, SimParams};
use driftopt::dataset::{split_and_save, SplitConfig, MANIFEST_FILE};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{create_dir, read_config};
use crate::manifest::ManifestBuilder;
use crate::Common;

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Recording length in seconds [default: 1080].
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub duration: f64,
    pub h: f64,
    pub sim: SimParams,
    pub excitation: ExcitationConfig,
    pub split: SplitConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            duration: 1080.0,
            h: 0.05,
            sim: SimParams::default(),
            excitation: ExcitationConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

pub fn collect(args: CollectArgs) -> Result<()> {
    let mut cfg: CollectConfig = read_config(args.common.config.as_deref())?;
    if let Some(d) = args.duration {
        cfg.duration = d;
    }
    if let Some(s) = args.common.seed {
        cfg.split.seed = s;
    }
    let seed = cfg.split.seed;
    let out = args.common.out_dir("collect");
    let mut manifest = ManifestBuilder::new("collect", &out, args.common.config.as_deref(), Some(seed));

    let log = collect_dataset_with(&cfg.sim, cfg.duration, cfg.h, seed, &cfg.excitation)?;
    create_dir(&out)?;
    let data = split_and_save(&log, &cfg.split, &out)?;
    let log_path = out.join("log.csv");
    write_log_csv(&log_path, &log.records)?;

    manifest.artifact(log_path);
    manifest.artifact(out.join("train_pairs.jsonl"));
    manifest.artifact(out.join("test_pairs.jsonl"));
    let mut validation: Vec<PathBuf> = std::fs::read_dir(out.join("validation"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    validation.sort();
    for p in validation {
        manifest.artifact(p);
    }
    manifest.artifact(out.join(MANIFEST_FILE));
    manifest.details(json!({
        "duration": cfg.duration,
        "h": cfg.h,
        "records": log.records.len(),
        "slip_records": log.slip_count(),
        "train_pairs": data.train.len(),
        "test_pairs": data.test.len(),
        "validation_trajectories": data.validation.len(),
    }));
    manifest.finish()?;
    println!(
        "collected {} records: {} train pairs, {} test pairs, {} validation trajectories -> {}",
        log.records.len(),
        data.train.len(),
        data.test.len(),
        data.validation.len(),
        out.display()
    );
    Ok(())
}
