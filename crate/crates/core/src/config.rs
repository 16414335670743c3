//! Run configuration files.
//!
//! A config is TOML. Top-level keys and the `[model]`, `[corruption]` and
//! `[objectives]` sections are the fields of [`TrainConfig`]; the optional
//! `[synthetic]`, `[tasks]`, `[finetune]`, `[grid]` and `[ablation]`
//! sections configure the other commands. Missing keys take their
//! defaults, unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticSpec;
use crate::error::{Error, Result};
use crate::trainer::{FinetuneHyper, HyperGrid, TrainConfig, Variant};

const SECTIONS: [&str; 5] = ["synthetic", "tasks", "finetune", "grid", "ablation"];

/// Sizes and seed of the generated downstream tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub train_examples: usize,
    pub dev_examples: usize,
    pub seed: u64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { train_examples: 2000, dev_examples: 1000, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub n_seeds: usize,
    pub variants: Vec<Variant>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { n_seeds: 8, variants: Variant::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub tasks: TaskSection,
    pub finetune: FinetuneHyper,
    pub grid: HyperGrid,
    pub ablation: AblationSection,
}

fn section<T: for<'de> Deserialize<'de> + Default>(table: &mut toml::Table, name: &str) -> Result<T> {
    match table.remove(name) {
        None => Ok(T::default()),
        Some(v) => v.try_into().map_err(|e| Error::Config(format!("[{name}]: {e}"))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<toml::Value> {
    toml::Value::try_from(v).map_err(|e| Error::Config(e.to_string()))
}

impl RunConfig {
    /// Settings that train the toy encoder to convergence-like behaviour
    /// on the default synthetic corpus within 2,000 steps.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.train.lr_peak = 8e-3;
        c.train.model.init_std = 0.15;
        c.finetune = FinetuneHyper { batch: 32, lr: 1e-3, epochs: 4, dropout: 0.1 };
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let synthetic = section(&mut table, "synthetic")?;
        let tasks = section(&mut table, "tasks")?;
        let finetune = section(&mut table, "finetune")?;
        let grid = section(&mut table, "grid")?;
        let ablation = section(&mut table, "ablation")?;
        let train: TrainConfig = toml::Value::Table(table).try_into().map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        Ok(Self { train, synthetic, tasks, finetune, grid, ablation })
    }

    pub fn to_toml(&self) -> Result<String> {
        let toml::Value::Table(mut table) = to_value(&self.train)? else {
            return Err(Error::Config("train config is not a table".into()));
        };
        for (name, v) in SECTIONS.iter().zip([
            to_value(&self.synthetic)?,
            to_value(&self.tasks)?,
            to_value(&self.finetune)?,
            to_value(&self.grid)?,
            to_value(&self.ablation)?,
        ]) {
            table.insert(name.to_string(), v);
        }
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn shipped_toy_config_matches_preset() {
        let text = include_str!("../../../configs/toy.toml");
        assert_eq!(RunConfig::from_toml(text).unwrap(), RunConfig::toy());
    }

    #[test]
    fn round_trip() {
        for c in [RunConfig::default(), RunConfig::toy()] {
            let text = c.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml(&text).unwrap(), c, "{text}");
        }
    }

    #[test]
    fn sections_override_fields() {
        let c = RunConfig::from_toml(
            "lr_peak = 0.002\nseed = 5\n[model]\nlayers = 3\n[objectives]\nword_structural = false\n\
             [finetune]\nepochs = 7\n[ablation]\nvariants = [\"full\", \"-both\"]\n",
        )
        .unwrap();
        assert_eq!(c.train.lr_peak, 0.002);
        assert_eq!(c.train.seed, 5);
        assert_eq!(c.train.model.layers, 3);
        assert_eq!(c.train.model.hidden, 64);
        assert!(!c.train.objectives.word_structural);
        assert_eq!(c.finetune.epochs, 7);
        assert_eq!(c.ablation.variants, [Variant::Full, Variant::NoBoth]);
    }

    #[test]
    fn unknown_keys_and_invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("lr_peek = 1.0").is_err());
        assert!(RunConfig::from_toml("[model]\nlayer = 2").is_err());
        assert!(RunConfig::from_toml("[finetune]\nepoch = 2").is_err());
        assert!(RunConfig::from_toml("[corruption]\nmask_rate = 1.5").is_err());
        assert!(RunConfig::from_toml("[ablation]\nvariants = [\"most\"]").is_err());
        assert!(RunConfig::from_toml("lr_peak = ").is_err());
    }
}
