use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use driftopt::dataset::SplitDataset;
use driftopt::selection::{run_selection, SelectionConfig};
use serde_json::json;

use super::read_config;
use crate::manifest::ManifestBuilder;
use crate::Common;

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `collect`.
    #[arg(long)]
    pub data: PathBuf,
    /// Start from 15 repeats per loss and a 200-network grid instead of the desk-scale defaults.
    #[arg(long)]
    pub full_scale: bool,
}

pub fn select(args: SelectArgs) -> Result<()> {
    let mut cfg: SelectionConfig = match (&args.common.config, args.full_scale) {
        (None, true) => SelectionConfig::full_scale(),
        (path, _) => read_config(path.as_deref())?,
    };
    if let Some(s) = args.common.seed {
        cfg.train.seed = s;
        cfg.comparison.seed = s;
        cfg.grid.seed = s;
        cfg.smoothness.seed = s;
    }
    let data = SplitDataset::load(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    data.require_validation()?;
    let out = args.common.out_dir("select");
    let mut manifest = ManifestBuilder::new("select", &out, args.common.config.as_deref(), args.common.seed);
    let report = run_selection(&data, &cfg)?;
    for path in report.write(&out)? {
        if path.ends_with("grid_timing.csv") {
            manifest.volatile(path);
        } else {
            manifest.artifact(path);
        }
    }
    let means: Vec<_> = report
        .comparison
        .kinds
        .iter()
        .map(|k| json!({ "loss": k.loss.name(), "mean_tve": k.mean, "std_tve": k.std }))
        .collect();
    let s = &report.smoothness;
    manifest.details(json!({
        "dataset": args.data.display().to_string(),
        "loss_comparison": means,
        "grid_rows": report.grid.rows.len(),
        "grid_rejected": report.grid.rejected.len(),
        "smoothness": {
            "relu": { "gradient": s.relu.gradient_fluctuation, "control": s.relu.control_fluctuation },
            "gelu": { "gradient": s.gelu.gradient_fluctuation, "control": s.gelu.control_fluctuation },
        },
    }));
    manifest.finish()?;
    for k in &report.comparison.kinds {
        println!("{:<9} TVE mean {:.4}  std {:.4}", k.loss.name(), k.mean, k.std);
    }
    if let Some(best) = report.grid.rows.first() {
        println!(
            "best grid config: {}x{} {} (TVE {:.4})",
            best.hidden_layers,
            best.width,
            best.activation.name(),
            best.tve
        );
    }
    println!("reports -> {}", out.display());
    Ok(())
}
