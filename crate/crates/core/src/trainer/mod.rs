//! Pre-training, fine-tuning, hyper-parameter search and ablations.

mod ablation;
mod finetune;
mod grid;
mod metrics;
mod pretrain;
pub mod tasks;

pub use ablation::{ablation_suite, sign_test, AblationConfig, AblationReport, AblationRow, SignTest, Variant};
pub use finetune::{
    evaluate_task, finetune, pack_task_example, DevMetric, FinetuneExample, FinetuneHyper, FinetuneOutcome, FinetuneTask,
    TaskHead, TaskKind, TaskTarget, MAX_ANSWER_LEN,
};
pub use grid::{grid_search, grid_search_with, GridResult, HyperGrid};
pub use metrics::{MetricsLog, StepRecord, METRICS_HEADER};
pub use pretrain::{evaluate, pretrain, pretrain_with, pretrain_batch, PretrainOutcome};

use serde::{Deserialize, Serialize};

use crate::corruptor::CorruptionConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Objectives};
use crate::numerics::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub corruption: CorruptionConfig,
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    /// Overrides `model.dropout` during training.
    pub dropout: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub objectives: Objectives,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            corruption: CorruptionConfig::default(),
            lr_peak: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-6,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            dropout: 0.1,
            batch_size: 32,
            total_steps: 2000,
            seed: 0,
            objectives: Objectives::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr_peak: self.lr_peak,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            warmup_fraction: self.warmup_fraction,
            total_steps: self.total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corruption.validate()?;
        let mut model = self.model.clone();
        model.dropout = self.dropout;
        model.validate()?;
        if self.corruption.max_len > self.model.max_len {
            return Err(Error::Config(format!(
                "corruption max_len {} exceeds model max_len {}",
                self.corruption.max_len, self.model.max_len
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_peak > 0.0) || !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("lr_peak and adam_eps must be positive, weight_decay non-negative".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup_fraction {} outside [0, 1]", self.warmup_fraction)));
        }
        Ok(())
    }
}
