//! Task material resolved into memory: either a pre-generated dataset read
//! from disk or one generated on the fly from a seeded config.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::{make_clda_task, read_dataset, DomainSpec, ManifestEntry, TaskConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    /// Directory holding a written dataset (manifest.json + clips).
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading one.
    #[serde(default)]
    pub generate: Option<TaskConfig>,
    /// Seed for in-memory generation. Defaults to the run seed, so each
    /// seeded run sees its own draw of the task.
    #[serde(default)]
    pub data_seed: Option<u64>,
}

impl DataSource {
    pub fn generated(cfg: TaskConfig) -> Self {
        DataSource { dir: None, generate: Some(cfg), data_seed: None }
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        DataSource { dir: Some(dir.into()), generate: None, data_seed: None }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dir, &self.generate) {
            (Some(_), Some(_)) => Err(Error::Config(
                "data source sets both dir and generate; pick one".into(),
            )),
            (None, None) => Err(Error::Config(
                "data source needs either dir or generate".into(),
            )),
            _ => {
                if self.data_seed.is_some() && self.generate.is_none() {
                    return Err(Error::Config(
                        "data_seed only applies when generating".into(),
                    ));
                }
                if let Some(cfg) = &self.generate {
                    cfg.validate()?;
                }
                Ok(())
            }
        }
    }
}

/// One clip with its metadata, held in memory.
#[derive(Clone, Debug)]
pub struct ClipRec {
    pub video: Tensor<f32>,
    /// Class id; -1 for unlabeled support clips.
    pub label: i64,
    pub domain: usize,
    pub mouth_box: [usize; 4],
}

pub struct LoadedTask {
    pub num_classes: usize,
    pub clip_shape: [usize; 3],
    pub domains: Vec<DomainSpec>,
    pub train: Vec<ClipRec>,
    pub val: Vec<ClipRec>,
    pub test: Vec<ClipRec>,
}

impl LoadedTask {
    /// Names of the domains actually in play, for report labeling.
    pub fn language_label(&self) -> String {
        self.domains.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join(" & ")
    }
}

fn rec_from(entry: &ManifestEntry, video: Tensor<f32>) -> ClipRec {
    ClipRec { video, label: entry.label, domain: entry.domain, mouth_box: entry.mouth_box }
}

pub fn load_task(src: &DataSource, run_seed: u64) -> Result<LoadedTask> {
    src.validate()?;
    if let Some(dir) = &src.dir {
        let ds = read_dataset(dir)?;
        let mut splits = Vec::new();
        for (_, entries) in ds.manifest.splits() {
            let mut recs = Vec::with_capacity(entries.len());
            for e in entries {
                recs.push(rec_from(e, ds.load_clip(e)?));
            }
            splits.push(recs);
        }
        let test = splits.pop().unwrap();
        let val = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Ok(LoadedTask {
            num_classes: ds.manifest.num_classes,
            clip_shape: ds.manifest.clip_shape,
            domains: ds.manifest.domains,
            train,
            val,
            test,
        })
    } else {
        let cfg = src.generate.as_ref().unwrap();
        let seed = src.data_seed.unwrap_or(run_seed);
        let ds = make_clda_task(seed, cfg)?;
        let mut clips = ds.clips.into_iter();
        let mut take = |entries: &[ManifestEntry]| -> Vec<ClipRec> {
            entries.iter().map(|e| rec_from(e, clips.next().unwrap())).collect()
        };
        Ok(LoadedTask {
            num_classes: ds.manifest.num_classes,
            clip_shape: ds.manifest.clip_shape,
            domains: ds.manifest.domains.clone(),
            train: take(&ds.manifest.train),
            val: take(&ds.manifest.val),
            test: take(&ds.manifest.test),
        })
    }
}

/// Stack clips into one (B, T, H, W) batch tensor.
pub fn stack_videos(clips: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = clips.first().ok_or_else(|| Error::invalid("stack_videos", "empty batch"))?;
    let shape = first.shape().to_vec();
    let per = first.numel();
    let mut out = Tensor::zeros(
        std::iter::once(clips.len()).chain(shape.iter().copied()).collect::<Vec<usize>>(),
    );
    for (i, c) in clips.iter().enumerate() {
        if c.shape() != shape.as_slice() {
            return Err(Error::shape(
                "stack_videos",
                format!("clip {i} has shape {:?}, expected {:?}", c.shape(), shape),
            ));
        }
        out.data_mut()[i * per..(i + 1) * per].copy_from_slice(c.data());
    }
    Ok(out)
}
