//! Bidirectional Transformer encoder with masked-token, shuffled-token and
//! sentence-order heads.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::Session;
pub use params::{LayerWeights, ModelConfig, ModelParams, Weights, MAX_POSITIONS};

use serde::{Deserialize, Serialize};

use crate::corruptor::PretrainExample;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor, Var};
use crate::rng::Rng;

/// Which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Objectives {
    pub word_structural: bool,
    pub sentence_structural: bool,
}

impl Default for Objectives {
    fn default() -> Self {
        Self { word_structural: true, sentence_structural: true }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadMetrics {
    /// Mean cross-entropy over this head's positions (0 if none).
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

impl HeadMetrics {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointMetrics {
    pub total: f64,
    pub mlm: HeadMetrics,
    pub shuffle: HeadMetrics,
    pub sentence: HeadMetrics,
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn head_metrics<T: Real>(logits: &Tensor<T>, targets: &[usize], loss: T) -> HeadMetrics {
    let correct = targets.iter().enumerate().filter(|&(r, &t)| argmax(logits.row(r)) == t).count();
    HeadMetrics { loss: loss.to_f64().unwrap_or(f64::NAN), correct, count: targets.len() }
}

/// Records the joint loss for a batch on `session`. Returns the scalar loss
/// node (`None` when no head has any positions) and the metrics.
///
/// Each head's term is the mean cross-entropy over its own positions; the
/// terms are summed with weight 1. A disabled objective contributes 0.
pub fn record_joint_loss<T: Real>(
    session: &mut Session<'_, T>,
    examples: &[PretrainExample],
    objectives: Objectives,
) -> Result<(Option<Var>, JointMetrics)> {
    let seq_len = examples.first().map(|e| e.len()).ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    if examples.iter().any(|e| e.len() != seq_len) {
        return Err(Error::Shape("examples in a batch must share a length".into()));
    }
    let ids: Vec<u32> = examples.iter().flat_map(|e| e.input_ids.iter().copied()).collect();
    let segs: Vec<u8> = examples.iter().flat_map(|e| e.segment_ids.iter().copied()).collect();
    let hl = session.hidden(&ids, &segs, seq_len)?;

    let mut mlm_rows = Vec::new();
    let mut mlm_targets = Vec::new();
    let mut shuf_rows = Vec::new();
    let mut shuf_targets = Vec::new();
    for (b, e) in examples.iter().enumerate() {
        for (&p, &t) in &e.mlm_targets {
            mlm_rows.push(b * seq_len + p);
            mlm_targets.push(t as usize);
        }
        if objectives.word_structural {
            for (&p, &t) in &e.shuffle_targets {
                shuf_rows.push(b * seq_len + p);
                shuf_targets.push(t as usize);
            }
        }
    }

    let mut metrics = JointMetrics::default();
    let mut terms: Vec<Var> = Vec::new();
    let n_mlm = mlm_rows.len();
    if n_mlm + shuf_rows.len() > 0 {
        let rows: Vec<usize> = mlm_rows.iter().chain(&shuf_rows).copied().collect();
        let logits = session.token_logits(hl, &rows)?;
        for (range, targets, slot) in [
            (0..n_mlm, &mlm_targets, &mut metrics.mlm),
            (n_mlm..rows.len(), &shuf_targets, &mut metrics.shuffle),
        ] {
            if range.is_empty() {
                continue;
            }
            let part = session.graph.gather_rows(logits, &range.collect::<Vec<_>>())?;
            let ce = session.graph.cross_entropy(part, targets)?;
            *slot = head_metrics(session.value(part), targets, session.value(ce).item());
            terms.push(ce);
        }
    }
    if objectives.sentence_structural {
        let cls_rows: Vec<usize> = (0..examples.len()).map(|b| b * seq_len).collect();
        let labels: Vec<usize> = examples.iter().map(|e| e.sentence_label.index()).collect();
        let logits = session.sentence_logits(hl, &cls_rows)?;
        let ce = session.graph.cross_entropy(logits, &labels)?;
        metrics.sentence = head_metrics(session.value(logits), &labels, session.value(ce).item());
        terms.push(ce);
    }

    let mut total = None;
    for t in terms {
        total = Some(match total {
            None => t,
            Some(acc) => session.graph.add(acc, t)?,
        });
    }
    metrics.total = total.map(|v| session.value(v).item().to_f64().unwrap_or(f64::NAN)).unwrap_or(0.0);
    Ok((total, metrics))
}

/// Joint loss and metrics without gradients (evaluation mode).
pub fn joint_loss<T: Real>(params: &ModelParams<T>, examples: &[PretrainExample], objectives: Objectives) -> Result<JointMetrics> {
    let mut s = Session::new(params, None);
    record_joint_loss(&mut s, examples, objectives).map(|(_, m)| m)
}

/// Joint loss, metrics, and the gradient of the loss for every weight.
pub fn joint_loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    examples: &[PretrainExample],
    objectives: Objectives,
    dropout_rng: Option<Rng>,
) -> Result<(JointMetrics, Weights<Tensor<T>>)> {
    let mut s = Session::new(params, dropout_rng);
    let (loss, metrics) = record_joint_loss(&mut s, examples, objectives)?;
    let grads = match loss {
        Some(l) => s.gradients(l)?.0,
        None => params.weights.map(|_, t| Tensor::zeros(t.shape())),
    };
    Ok((metrics, grads))
}
