use serde::{Deserialize, Serialize};

use super::finetune::{finetune, FinetuneHyper, FinetuneTask};
use crate::error::{Error, Result};
use crate::model::Checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub batch: Vec<usize>,
    pub lr: Vec<f64>,
    pub epochs: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self { batch: vec![16, 24, 32], lr: vec![2e-5, 3e-5, 5e-5], epochs: vec![2, 3], dropout: vec![0.05, 0.1] }
    }
}

impl HyperGrid {
    pub fn singleton(h: FinetuneHyper) -> Self {
        Self { batch: vec![h.batch], lr: vec![h.lr], epochs: vec![h.epochs], dropout: vec![h.dropout] }
    }

    /// Every combination, ordered by lr, then batch, epochs, dropout
    /// (each ascending).
    pub fn combinations(&self) -> Vec<FinetuneHyper> {
        let sorted_f = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let sorted_u = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let (lrs, batches, epochs, drops) = (sorted_f(&self.lr), sorted_u(&self.batch), sorted_u(&self.epochs), sorted_f(&self.dropout));
        let mut out = Vec::new();
        for &lr in &lrs {
            for &batch in &batches {
                for &e in &epochs {
                    for &dropout in &drops {
                        out.push(FinetuneHyper { batch, lr, epochs: e, dropout });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: FinetuneHyper,
    pub metric: f64,
    /// Every evaluated combination with its dev metric, in search order.
    pub trials: Vec<(FinetuneHyper, f64)>,
}

/// Scores every combination with `eval` and keeps the best. Ties go to the
/// lower learning rate, then the smaller batch. Non-finite scores never win.
pub fn grid_search_with(grid: &HyperGrid, mut eval: impl FnMut(&FinetuneHyper) -> Result<f64>) -> Result<GridResult> {
    let combos = grid.combinations();
    if combos.is_empty() {
        return Err(Error::InvalidArgument("empty hyper-parameter grid".into()));
    }
    let mut trials = Vec::with_capacity(combos.len());
    let mut best: Option<(FinetuneHyper, f64)> = None;
    for h in combos {
        let m = eval(&h)?;
        trials.push((h, m));
        let score = if m.is_finite() { m } else { f64::NEG_INFINITY };
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((h, score));
        }
    }
    let (best, metric) = best.expect("non-empty grid");
    Ok(GridResult { best, metric, trials })
}

/// Fine-tunes `checkpoint` on `task` for every combination.
pub fn grid_search(checkpoint: &Checkpoint, task: &FinetuneTask, grid: &HyperGrid, seed: u64) -> Result<GridResult> {
    grid_search_with(grid, |h| finetune(checkpoint, task, h, seed).map(|o| o.dev.primary()))
}
