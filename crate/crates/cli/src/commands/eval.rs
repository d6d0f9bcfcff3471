use avnet_core::data::{split_folds, ClassWeights, ColorMatch, DatasetManifest};
use avnet_core::ops::PaddingMode;
use avnet_core::train::{evaluate, EvalOptions};

use super::{load_manifest_samples, load_model};
use crate::{CliError, EvalArgs};

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let (ckpt, model) = load_model(&args.checkpoint)?;
    if model.config().input_channels != 3 {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} input channels but manifest images are RGB",
            model.config().input_channels
        )));
    }

    // Padding mode and fold count fall back to the embedded run config.
    let run_cfg: Option<crate::config::RunConfig> = ckpt
        .run_config_json()
        .and_then(|json| serde_json::from_str(&json).ok());
    let padding = run_cfg
        .as_ref()
        .map(|c| c.eval_padding)
        .unwrap_or(PaddingMode::Reflect);
    let folds = args
        .folds
        .or_else(|| run_cfg.as_ref().map(|c| c.folds))
        .unwrap_or(5);

    let manifest = DatasetManifest::load(&args.manifest).map_err(CliError::usage)?;
    let ids = match (args.split.as_str(), args.fold) {
        ("test", _) => manifest.test_ids.clone(),
        ("all", None) => manifest.ids(),
        ("train", fold) | ("val", fold) | ("all", fold) => {
            let trainable = manifest.trainable_ids();
            let fold_index = fold.unwrap_or(0);
            let split = split_folds(&trainable, folds.min(trainable.len().max(2)), manifest.seed)
                .map_err(CliError::usage)?;
            let (train_ids, val_ids) = split
                .get(fold_index)
                .ok_or_else(|| CliError::Usage(format!("fold {fold_index} out of range")))?
                .clone();
            if args.split == "train" {
                train_ids
            } else {
                val_ids
            }
        }
        (other, _) => {
            return Err(CliError::Usage(format!(
                "unknown split {other:?}; expected all, test, train or val"
            )))
        }
    };
    if ids.is_empty() {
        return Err(CliError::Usage(format!(
            "no samples selected for split {:?}",
            args.split
        )));
    }
    let samples = load_manifest_samples(
        &args.manifest,
        &ids,
        &ClassWeights::default(),
        ColorMatch::Strict,
    )?;

    let opts = EvalOptions {
        padding,
        report_recall: args.recall,
    };
    let (_, report) = evaluate(&model, &samples, &opts).map_err(CliError::runtime)?;
    let artifact = serde_json::json!({
        "split": args.split,
        "fold": args.fold,
        "checkpoint": args.checkpoint.display().to_string(),
        "report": report,
        "config": ckpt
            .run_config_json()
            .and_then(|j| serde_json::from_str::<serde_json::Value>(&j).ok()),
    });
    let text = serde_json::to_string_pretty(&artifact).unwrap();
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            let _ = std::fs::create_dir_all(parent);
        }
        std::fs::write(out, &text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
    }
    println!("{text}");
    Ok(())
}
