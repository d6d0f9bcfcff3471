//! Dataset manifest: JSON listing of image/label pairs plus the split
//! seed. Paths are resolved relative to the manifest file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{ClassWeights, ColorMatch};
use super::sample::{load_sample, FundusSample};
use crate::error::{AvError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub label: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Seed controlling split assignment for this dataset.
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
    /// Ids held out entirely from cross-validation (final test cases).
    #[serde(default)]
    pub test_ids: Vec<String>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        if !path.exists() {
            return Err(AvError::Data(format!(
                "missing manifest: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for entry in &self.samples {
            if !seen.insert(&entry.id) {
                return Err(AvError::Data(format!("duplicate sample id: {}", entry.id)));
            }
        }
        for id in &self.test_ids {
            if !seen.contains(id) {
                return Err(AvError::Data(format!(
                    "test id {id} does not match any sample"
                )));
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|e| e.id.clone()).collect()
    }

    /// Ids participating in cross-validation (everything not held out).
    pub fn trainable_ids(&self) -> Vec<String> {
        self.samples
            .iter()
            .filter(|e| !self.test_ids.contains(&e.id))
            .map(|e| e.id.clone())
            .collect()
    }

    fn resolve(base: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Load the listed samples, keeping manifest ids as sample ids.
    pub fn load_samples(
        &self,
        base_dir: &Path,
        ids: &[String],
        weights: &ClassWeights,
        color_match: ColorMatch,
    ) -> Result<Vec<FundusSample>> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let entry = self
                .samples
                .iter()
                .find(|e| &e.id == id)
                .ok_or_else(|| AvError::Data(format!("manifest has no sample with id {id}")))?;
            let mut sample = load_sample(
                &Self::resolve(base_dir, &entry.image),
                &Self::resolve(base_dir, &entry.label),
                weights,
                color_match,
            )?;
            sample.id = entry.id.clone();
            out.push(sample);
        }
        Ok(out)
    }
}
