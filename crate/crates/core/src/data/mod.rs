//! Data pipeline: label codec, sample IO, synthetic generation,
//! geometric augmentation and fold splits.

pub mod augment;
pub mod folds;
pub mod labels;
pub mod manifest;
pub mod sample;
pub mod synthetic;

pub use augment::{augment, augment_with_params, AugmentationConfig, AugmentedDataset, AugmentParams};
pub use folds::split_folds;
pub use labels::{
    class_weight_map, decode_predictions, encode_labels, labels_to_image, ClassBatch, ClassId,
    ClassMap, ClassWeights, ColorMatch, IGNORE,
};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use sample::{image_to_tensor, load_image_tensor, load_sample, save_sample, tensor_to_image, FundusSample};
pub use synthetic::{generate_synthetic, generate_synthetic_with};

use crate::error::Result;

/// Uniform access to an ordered collection of samples; implementations
/// may materialize items lazily (augmented views are derived on demand).
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, index: usize) -> Result<FundusSample>;

    fn id(&self, index: usize) -> String;
}

impl Dataset for [FundusSample] {
    fn len(&self) -> usize {
        <[FundusSample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<FundusSample> {
        Ok(self[index].clone())
    }

    fn id(&self, index: usize) -> String {
        self[index].id.clone()
    }
}

impl Dataset for Vec<FundusSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<FundusSample> {
        Ok(self[index].clone())
    }

    fn id(&self, index: usize) -> String {
        self[index].id.clone()
    }
}
