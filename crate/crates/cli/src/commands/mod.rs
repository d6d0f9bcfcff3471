pub mod analyze;
pub mod eval;
pub mod predict;
pub mod train;

use std::path::{Path, PathBuf};

use avnet_core::data::{ClassWeights, ColorMatch, DatasetManifest, FundusSample};
use avnet_core::train::Checkpoint;
use avnet_core::model::AvNet;

use crate::CliError;

/// Load and restore a checkpointed model (usage error on any failure:
/// a broken checkpoint means the invocation cannot proceed).
pub fn load_model(path: &Path) -> Result<(Checkpoint, AvNet<f32>), CliError> {
    let ckpt = avnet_core::train::load(path).map_err(CliError::usage)?;
    let model = avnet_core::train::restore_model::<f32>(&ckpt).map_err(CliError::usage)?;
    Ok((ckpt, model))
}

/// Resolve a manifest and load the samples for the requested ids.
pub fn load_manifest_samples(
    manifest_path: &Path,
    ids: &[String],
    weights: &ClassWeights,
    color_match: ColorMatch,
) -> Result<Vec<FundusSample>, CliError> {
    let manifest = DatasetManifest::load(manifest_path).map_err(CliError::usage)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .load_samples(base, ids, weights, color_match)
        .map_err(CliError::usage)
}

/// Seconds since the epoch; used only to disambiguate run directories.
pub fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn ensure_dir(path: &PathBuf) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}
