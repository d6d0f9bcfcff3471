use avnet_core::data::{decode_predictions, load_image_tensor};
use avnet_core::model::predict_image;
use avnet_core::ops::PaddingMode;

use super::load_model;
use crate::{CliError, PredictArgs};

pub fn run(args: PredictArgs) -> Result<(), CliError> {
    let (ckpt, model) = load_model(&args.checkpoint)?;
    if model.config().input_channels != 3 {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} input channels but the input image is RGB",
            model.config().input_channels
        )));
    }
    if model.config().num_classes != 4 {
        return Err(CliError::Usage(format!(
            "overlay decoding needs the 4-class palette, checkpoint has {} classes",
            model.config().num_classes
        )));
    }
    let image = load_image_tensor(&args.image).map_err(CliError::usage)?;

    let padding = ckpt
        .run_config_json()
        .and_then(|json| serde_json::from_str::<crate::config::RunConfig>(&json).ok())
        .map(|c| c.eval_padding)
        .unwrap_or(PaddingMode::Reflect);
    let probs = predict_image(&model, &image, padding).map_err(CliError::runtime)?;
    let overlay = decode_predictions(&probs, None).map_err(CliError::runtime)?;
    if let Some(parent) = args.out.parent() {
        let _ = std::fs::create_dir_all(parent);
    }
    overlay
        .save(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
