//! Experiment configuration: strict JSON with every knob of the pipeline.
//!
//! Unknown keys are rejected rather than ignored — a typo in an experiment
//! config must fail loudly, not silently fall back to a default and corrupt
//! a comparison.

use crate::error::{CliError, Result};
use pruneclust_core::cluster::SignatureParams;
use pruneclust_core::models::{Arch, Family};
use pruneclust_core::pruner::{Criterion, Method};
use pruneclust_core::train::Augment;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Minivgg,
    Miniresnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    L1,
    Movement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Baseline,
    Clustered,
}

fn default_blocks() -> usize {
    1
}
fn default_retrain_epochs() -> usize {
    15
}
fn default_am_steps() -> usize {
    256
}
fn default_am_step_size() -> f32 {
    0.05
}
fn default_kmeans_restarts() -> usize {
    10
}
fn default_encoder() -> String {
    "default".into()
}
fn default_data_dir() -> String {
    "data".into()
}

/// One experiment cell: what to train, how to prune, where to write.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub model: ModelKind,
    pub widths: Vec<usize>,
    /// Basic blocks per stage; only read for the resnet family.
    #[serde(default = "default_blocks")]
    pub blocks_per_stage: usize,
    pub seed: u64,
    pub epochs_initial: usize,
    pub lr_max: f32,
    pub batch_size: usize,
    pub criterion: CriterionKind,
    pub method: MethodKind,
    /// Single sparsity for `prune`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_sparsity: Option<f64>,
    /// Sparsity grid for `lottery`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity_list: Option<Vec<f64>>,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    /// Ticket retraining budget; the protocol default matches Step (1).
    #[serde(default = "default_retrain_epochs")]
    pub retrain_epochs: usize,
    #[serde(default = "default_am_steps")]
    pub am_steps: usize,
    #[serde(default = "default_am_step_size")]
    pub am_step_size: f32,
    #[serde(default = "default_kmeans_restarts")]
    pub kmeans_restarts: usize,
    /// `default` (seeded random weights) or `file:<checkpoint path>`.
    #[serde(default = "default_encoder")]
    pub encoder: String,
    /// Directory holding `mnist/` or `cifar-10-batches-bin/`.
    #[serde(default = "default_data_dir")]
    pub data_dir: String,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs_initial", self.epochs_initial),
            ("batch_size", self.batch_size),
            ("finetune_epochs", self.finetune_epochs),
            ("retrain_epochs", self.retrain_epochs),
            ("am_steps", self.am_steps),
            ("kmeans_restarts", self.kmeans_restarts),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr_max > 0.0) {
            return Err(CliError::Config(format!("lr_max must be positive, got {}", self.lr_max)));
        }
        if !(self.finetune_lr > 0.0) {
            return Err(CliError::Config(format!("finetune_lr must be positive, got {}", self.finetune_lr)));
        }
        if !(self.am_step_size > 0.0) {
            return Err(CliError::Config(format!("am_step_size must be positive, got {}", self.am_step_size)));
        }
        if self.widths.is_empty() {
            return Err(CliError::Config("widths must not be empty".into()));
        }
        if let Some(s) = self.target_sparsity {
            if !(s > 0.0 && s < 1.0) {
                return Err(CliError::Config(format!("target_sparsity must be in (0,1), got {s}")));
            }
        }
        if let Some(list) = &self.sparsity_list {
            if list.is_empty() {
                return Err(CliError::Config("sparsity_list must not be empty".into()));
            }
            for &s in list {
                if !(s >= 0.0 && s < 1.0) {
                    return Err(CliError::Config(format!(
                        "sparsity_list entries must be in [0,1) (0 = unpruned control), got {s}"
                    )));
                }
            }
        }
        if self.encoder != "default" && !self.encoder.starts_with("file:") {
            return Err(CliError::Config(format!(
                "encoder must be \"default\" or \"file:<path>\", got {:?}",
                self.encoder
            )));
        }
        Ok(())
    }

    /// Input geometry of the configured dataset: (channels, height, width).
    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self.dataset {
            DatasetKind::Mnist => (1, 32, 32),
            DatasetKind::Cifar10 => (3, 32, 32),
        }
    }

    pub fn arch(&self) -> Arch {
        let (channels, _, _) = self.input_shape();
        Arch {
            family: match self.model {
                ModelKind::Minivgg => Family::MiniVgg,
                ModelKind::Miniresnet => Family::MiniResnet,
            },
            widths: self.widths.clone(),
            blocks_per_stage: match self.model {
                ModelKind::Minivgg => 0,
                ModelKind::Miniresnet => self.blocks_per_stage,
            },
            num_classes: 10,
            in_channels: channels,
        }
    }

    pub fn criterion(&self) -> Criterion {
        match self.criterion {
            CriterionKind::L1 => Criterion::L1,
            CriterionKind::Movement => Criterion::Movement,
        }
    }

    pub fn method(&self) -> Method {
        match self.method {
            MethodKind::Baseline => Method::Baseline,
            MethodKind::Clustered => Method::Clustered,
        }
    }

    pub fn signature_params(&self) -> SignatureParams {
        SignatureParams { steps: self.am_steps, step_size: self.am_step_size }
    }

    /// The protocol ties augmentation to the dataset: flips and 4-pixel
    /// crops for CIFAR-10, nothing for MNIST.
    pub fn augment(&self) -> Augment {
        match self.dataset {
            DatasetKind::Mnist => Augment::None,
            DatasetKind::Cifar10 => Augment::FlipCrop4,
        }
    }

    pub fn dataset_name(&self) -> &'static str {
        match self.dataset {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelKind::Minivgg => "minivgg",
            ModelKind::Miniresnet => "miniresnet",
        }
    }

    /// The published name of the (criterion, method) condition.
    pub fn method_tag(&self) -> &'static str {
        method_tag(self.criterion(), self.method())
    }

    pub fn run_id(&self, sparsity: Option<f64>) -> String {
        match sparsity {
            Some(s) => format!(
                "{}-{}-{}-s{:03}-seed{}",
                self.dataset_name(),
                self.model_name(),
                self.method_tag(),
                (s * 100.0).round() as u32,
                self.seed
            ),
            None => format!("{}-{}-{}-seed{}", self.dataset_name(), self.model_name(), self.method_tag(), self.seed),
        }
    }
}

/// Condition names as they appear in the metrics CSV.
pub fn method_tag(criterion: Criterion, method: Method) -> &'static str {
    match (criterion, method) {
        (Criterion::L1, Method::Baseline) => "l1",
        (Criterion::L1, Method::Clustered) => "cluster_l1",
        (Criterion::Movement, Method::Baseline) => "movement",
        (Criterion::Movement, Method::Clustered) => "cluster_movement",
    }
}
