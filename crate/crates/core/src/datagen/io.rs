//! Dataset layout on disk: a `manifest.json` describing splits and domains,
//! plus one tensor file per clip under `clips/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_vtns_f32, write_vtns, Tensor};

use super::{DomainSpec, GeneratedDataset, GENERATOR_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Clip path relative to the dataset directory.
    pub path: String,
    /// Class id, or -1 when the clip is unlabeled.
    pub label: i64,
    pub domain: usize,
    pub speaker: u64,
    pub sample_seed: u64,
    /// [y0, y1, x0, x1) pixel box covering the mouth in every frame.
    pub mouth_box: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub num_classes: usize,
    pub clip_shape: [usize; 3],
    pub domains: Vec<DomainSpec>,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn splits(&self) -> [(&str, &[ManifestEntry]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.train.iter().chain(self.val.iter()).chain(self.test.iter())
    }
}

pub fn write_dataset(ds: &GeneratedDataset, dir: &Path) -> Result<()> {
    let total = ds.manifest.train.len() + ds.manifest.val.len() + ds.manifest.test.len();
    if total != ds.clips.len() {
        return Err(Error::Manifest(format!(
            "manifest lists {total} clips but {} tensors were generated",
            ds.clips.len()
        )));
    }
    fs::create_dir_all(dir.join("clips")).map_err(|e| Error::io(dir.join("clips"), e))?;
    let json = serde_json::to_string_pretty(&ds.manifest)?;
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    for (entry, clip) in ds.manifest.entries().zip(&ds.clips) {
        write_vtns(&dir.join(&entry.path), clip)?;
    }
    Ok(())
}

/// Manifest plus the directory it came from; clips load on demand.
#[derive(Debug)]
pub struct LazyDataset {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
}

impl LazyDataset {
    pub fn load_clip(&self, entry: &ManifestEntry) -> Result<Tensor<f32>> {
        let clip = read_vtns_f32(&self.dir.join(&entry.path))?;
        if clip.shape() != self.manifest.clip_shape.as_slice() {
            return Err(Error::Manifest(format!(
                "clip {} has shape {:?}, manifest says {:?}",
                entry.path,
                clip.shape(),
                self.manifest.clip_shape
            )));
        }
        Ok(clip)
    }
}

pub fn read_dataset(dir: &Path) -> Result<LazyDataset> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    if manifest.version != GENERATOR_VERSION {
        return Err(Error::Manifest(format!(
            "dataset version {} not supported; this build generates version {GENERATOR_VERSION}",
            manifest.version
        )));
    }
    Ok(LazyDataset { manifest, dir: dir.to_path_buf() })
}
