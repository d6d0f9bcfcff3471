//! Run configuration: one JSON file drives every command. Unknown keys
//! are rejected; command-line flags override individual fields.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use avnet_core::data::{AugmentationConfig, ClassWeights, ColorMatch};
use avnet_core::model::ModelConfig;
use avnet_core::ops::PaddingMode;
use avnet_core::train::{LrSchedule, OptimizerKind};
use avnet_core::{AvError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub power: f64,
    /// Defaults to the run's iteration count when omitted.
    pub max_iter: Option<usize>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            base_lr: 1e-4,
            power: 0.9,
            max_iter: None,
        }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self, iterations: usize) -> Result<LrSchedule> {
        LrSchedule::new(
            self.base_lr,
            self.power,
            self.max_iter.unwrap_or(iterations).max(1),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub count: usize,
    pub size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { count: 1, size: 64 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub augment: AugmentationConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerKind,
    pub class_weights: ClassWeights,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Source dataset; omitted when training on synthetic data.
    pub manifest: Option<PathBuf>,
    /// Generate this many synthetic samples instead of reading a manifest.
    pub synthetic: Option<SyntheticConfig>,
    pub out_dir: PathBuf,
    pub eval_padding: PaddingMode,
    pub color_match: ColorMatch,
    pub checkpoint_every: Option<usize>,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            augment: AugmentationConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerKind::default(),
            class_weights: ClassWeights::default(),
            batch_size: 4,
            iterations: 1000,
            seed: 0,
            manifest: None,
            synthetic: None,
            out_dir: PathBuf::from("runs"),
            eval_padding: PaddingMode::Reflect,
            color_match: ColorMatch::Strict,
            checkpoint_every: None,
            folds: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(AvError::Data(format!(
                "missing config: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.class_weights.validate()?;
        if self.batch_size == 0 {
            return Err(AvError::InvalidArgument(
                "batch_size must be positive".into(),
            ));
        }
        if self.folds < 2 {
            return Err(AvError::InvalidArgument(
                "folds must be at least 2".into(),
            ));
        }
        let stride = self.model.bottleneck_stride();
        if !self.augment.crop_size.is_multiple_of(stride) {
            return Err(AvError::InvalidArgument(format!(
                "augment.crop_size {} must be divisible by the bottleneck stride {stride}",
                self.augment.crop_size
            )));
        }
        if let Some(sy) = &self.synthetic {
            if sy.count == 0 {
                return Err(AvError::InvalidArgument(
                    "synthetic.count must be positive".into(),
                ));
            }
            if sy.size < 32 || sy.size % stride != 0 {
                return Err(AvError::InvalidArgument(format!(
                    "synthetic.size must be >= 32 and divisible by {stride}, got {}",
                    sy.size
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Short content hash for default run-directory names.
    pub fn short_hash(&self) -> String {
        format!("{:08x}", crc32fast::hash(self.to_json().as_bytes()))
    }
}
