//! Experiment orchestration: configs, the training loop, metrics, and the
//! artifacts a run leaves behind.
//!
//! A run is a pure function of its JSON config and a seed. Everything random
//! flows from named streams derived off that seed, so rerunning a config
//! reproduces every number in the report, and a dataset regenerated from the
//! same generation spec is byte-identical.

pub mod data;
pub mod metrics;
pub mod pgm;
pub mod probe;
pub mod saliency;
pub mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adversarial::DaConfig;
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::optim::TrainHyper;

pub use data::{DataSource, LoadedTask};
pub use metrics::{aggregate, classification_metrics, confusion_csv, format_cell, mean_std, Aggregate, Metrics};
pub use probe::domain_probe_accuracy;
pub use saliency::{mass_inside, saliency, SaliencyMap};
pub use train::{evaluate, train, TrainOutcome};

/// Everything one experiment needs, as read from a JSON config file.
/// Unknown keys are rejected so a typo fails loudly instead of silently
/// running defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainHyper,
    /// Present enables the gradient-reversed domain head.
    #[serde(default)]
    pub da: Option<DaConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if let Some(da) = &self.da {
            da.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds list is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Effective gradient-reversal coefficient; 0 without a domain head.
    pub lambda: f64,
    pub train_loss: f64,
    pub train_acc1: f64,
    pub val_loss: f64,
    pub val_acc1: f64,
}

/// Complete record of one seeded training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub model_label: String,
    /// Domain names joined into a human-readable tag.
    pub languages: String,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub test: Metrics,
    /// Rows are true classes, columns predicted.
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Everything in the report except wall-clock time, serialized. Two runs
    /// of the same config and seed must produce equal fingerprints.
    pub fn metrics_fingerprint(&self) -> String {
        let mut shadow = self.clone();
        shadow.wall_clock_secs = 0.0;
        serde_json::to_string(&shadow).expect("report serializes")
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,lr,lambda,train_loss,train_acc1,val_loss,val_acc1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.lr, e.lambda, e.train_loss, e.train_acc1, e.val_loss, e.val_acc1
            ));
        }
        out
    }

    /// Sanity invariant: Acc@1 must equal the confusion trace over its total.
    pub fn confusion_consistent(&self) -> bool {
        let n: usize = self.confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
        if n == 0 {
            return false;
        }
        let trace: usize = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        trace as f64 / n as f64 == self.test.acc1
    }
}
