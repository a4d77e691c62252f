use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use driftopt::dataset::SplitDataset;
use driftopt::mlp::{train_with_progress, Activation, LossKind, MlpSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{create_dir, read_config};
use crate::manifest::ManifestBuilder;
use crate::Common;

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `collect`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            width: 64,
            activation: Activation::Gelu,
            train: TrainConfig::default(),
        }
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainFile = read_config(args.common.config.as_deref())?;
    cfg.hidden_layers = args.hidden_layers.unwrap_or(cfg.hidden_layers);
    cfg.width = args.width.unwrap_or(cfg.width);
    cfg.activation = args.activation.unwrap_or(cfg.activation);
    cfg.train.loss = args.loss.unwrap_or(cfg.train.loss);
    cfg.train.epochs = args.epochs.unwrap_or(cfg.train.epochs);
    cfg.train.seed = args.common.seed.unwrap_or(cfg.train.seed);
    let spec = MlpSpec::uniform(cfg.hidden_layers, cfg.width, cfg.activation, cfg.train.seed)?;
    cfg.train.validate()?;

    let data = SplitDataset::load(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    let out = args.common.out_dir("train");
    let mut manifest = ManifestBuilder::new("train", &out, args.common.config.as_deref(), Some(cfg.train.seed));
    let outcome = train_with_progress(&spec, &data.train, &data.test, &cfg.train, |e| {
        if e.epoch == 0 || (e.epoch + 1) % 10 == 0 {
            eprintln!("epoch {:>4}  train {:.6}  test {:.6}", e.epoch + 1, e.train_loss, e.test_loss);
        }
    })?;

    create_dir(&out)?;
    let model_path = out.join("model.json");
    let history_path = out.join("history.csv");
    outcome.model.save(&model_path)?;
    outcome.history.write_csv(&history_path)?;
    manifest.artifact(model_path);
    manifest.artifact(history_path);
    let final_train = outcome.history.train_losses().last().copied();
    manifest.details(json!({
        "dataset": args.data.display().to_string(),
        "loss": cfg.train.loss.name(),
        "hidden_layers": cfg.hidden_layers,
        "width": cfg.width,
        "activation": cfg.activation.name(),
        "epochs": cfg.train.epochs,
        "train_pairs": data.train.len(),
        "final_train_loss": final_train,
        "final_test_loss": outcome.history.final_test_loss(),
    }));
    manifest.finish()?;
    println!("trained {} parameters -> {}", spec.param_count(), out.display());
    Ok(())
}
