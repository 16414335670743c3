use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corruptor::{pack, pack_single};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelParams, Session};
use crate::numerics::{AdamConfig, AdamState, ParamSlot, Tensor, Var};
use crate::rng;

/// Longest predicted answer, in positions.
pub const MAX_ANSWER_LEN: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleSentenceCls,
    SentencePairCls,
    SpanExtraction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskTarget {
    Class(usize),
    /// Inclusive token range inside the second text (the passage).
    Span { start: usize, end: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinetuneExample {
    pub first: Vec<u32>,
    /// Second segment; the passage for span extraction.
    pub second: Option<Vec<u32>>,
    pub target: TaskTarget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneTask {
    pub name: String,
    pub kind: TaskKind,
    /// Classes for cls kinds; ignored for span extraction.
    pub num_labels: usize,
    pub train: Vec<FinetuneExample>,
    pub dev: Vec<FinetuneExample>,
    /// When set, must match the checkpoint's vocabulary.
    pub vocab_fingerprint: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneHyper {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub dropout: f64,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        Self { batch: 32, lr: 5e-5, epochs: 3, dropout: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DevMetric {
    Accuracy(f64),
    Span { exact_match: f64, f1: f64 },
}

impl DevMetric {
    /// Accuracy for classification, F1 for spans.
    pub fn primary(&self) -> f64 {
        match *self {
            DevMetric::Accuracy(a) => a,
            DevMetric::Span { f1, .. } => f1,
        }
    }
}

/// Task-specific output layer on top of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskHead {
    /// `[CLS]` classifier: weight `H × labels`, bias.
    Cls { w: Tensor<f32>, b: Tensor<f32> },
    /// Independent start and end scorers, each `H × 1` with a scalar bias.
    Span { start_w: Tensor<f32>, start_b: Tensor<f32>, end_w: Tensor<f32>, end_b: Tensor<f32> },
}

impl TaskHead {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        match self {
            TaskHead::Cls { w, b } => vec![w, b],
            TaskHead::Span { start_w, start_b, end_w, end_b } => vec![start_w, start_b, end_w, end_b],
        }
    }

    fn tensors(&self) -> Vec<&Tensor<f32>> {
        match self {
            TaskHead::Cls { w, b } => vec![w, b],
            TaskHead::Span { start_w, start_b, end_w, end_b } => vec![start_w, start_b, end_w, end_b],
        }
    }
}

pub struct FinetuneOutcome {
    pub params: ModelParams<f32>,
    pub head: TaskHead,
    pub dev: DevMetric,
    pub steps: usize,
}

/// Packed ids, segments, and for spans the packed offset of the passage and
/// its kept length.
#[derive(Clone, Debug)]
struct Packed {
    ids: Vec<u32>,
    segs: Vec<u8>,
    passage: (usize, usize),
    target: TaskTarget,
}

/// Packs one example: `[CLS] s [SEP]` with segment 0 for single sentences,
/// the pre-training layout for pairs.
pub fn pack_task_example(ex: &FinetuneExample, max_len: usize) -> Result<(Vec<u32>, Vec<u8>)> {
    match &ex.second {
        None => pack_single(&ex.first, max_len),
        Some(s) => pack(&ex.first, s, max_len),
    }
}

fn pack_example(ex: &FinetuneExample, kind: TaskKind, max_len: usize) -> Result<Packed> {
    let (ids, segs) = pack_task_example(ex, max_len)?;
    let passage = match &ex.second {
        Some(_) => {
            let seps: Vec<usize> = ids.iter().enumerate().filter(|(_, &t)| t == crate::tokenizer::SEP).map(|(i, _)| i).collect();
            (seps[0] + 1, seps[1] - seps[0] - 1)
        }
        None => (1, 0),
    };
    match (kind, ex.target, &ex.second) {
        (TaskKind::SpanExtraction, TaskTarget::Span { start, end }, Some(_)) => {
            if start > end || end >= passage.1 {
                return Err(Error::InvalidArgument(format!("span {start}..={end} outside the kept passage of {}", passage.1)));
            }
        }
        (TaskKind::SpanExtraction, _, _) => return Err(Error::InvalidArgument("span example needs a passage and a span".into())),
        (TaskKind::SingleSentenceCls, TaskTarget::Class(_), None) | (TaskKind::SentencePairCls, TaskTarget::Class(_), Some(_)) => {}
        _ => return Err(Error::InvalidArgument(format!("example does not fit task kind {kind:?}"))),
    }
    Ok(Packed { ids, segs, passage, target: ex.target })
}

impl FinetuneTask {
    fn packed(&self, ck: &Checkpoint) -> Result<(Vec<Packed>, Vec<Packed>)> {
        if self.train.is_empty() {
            return Err(Error::InvalidArgument(format!("task {} has no training examples", self.name)));
        }
        if self.dev.is_empty() {
            return Err(Error::InvalidArgument(format!("task {} has no dev examples", self.name)));
        }
        if let (Some(want), Some(have)) = (self.vocab_fingerprint, ck.meta.get("vocab_fingerprint")) {
            if format!("{want:016x}") != *have {
                return Err(Error::Incompatible(format!("task vocabulary {want:016x} != checkpoint {have}")));
            }
        }
        let cfg = &ck.params.config;
        if self.kind != TaskKind::SpanExtraction && self.num_labels < 2 {
            return Err(Error::InvalidArgument("classification needs at least 2 labels".into()));
        }
        let mut sets = Vec::new();
        for set in [&self.train, &self.dev] {
            let mut out = Vec::with_capacity(set.len());
            for ex in set.iter() {
                let texts = ex.first.iter().chain(ex.second.iter().flatten());
                if let Some(&bad) = texts.clone().find(|&&t| t as usize >= cfg.vocab_size) {
                    return Err(Error::Incompatible(format!("token id {bad} outside checkpoint vocabulary {}", cfg.vocab_size)));
                }
                let p = pack_example(ex, self.kind, cfg.max_len)?;
                if let TaskTarget::Class(c) = p.target {
                    if c >= self.num_labels {
                        return Err(Error::InvalidArgument(format!("label {c} >= num_labels {}", self.num_labels)));
                    }
                }
                out.push(p);
            }
            sets.push(out);
        }
        let dev = sets.pop().unwrap_or_default();
        let train = sets.pop().unwrap_or_default();
        Ok((train, dev))
    }
}

fn batch_inputs(batch: &[&Packed]) -> (Vec<u32>, Vec<u8>, usize) {
    let len = batch.iter().map(|p| p.ids.iter().take_while(|&&t| t != crate::tokenizer::PAD).count()).max().unwrap_or(1).max(1);
    let mut ids = Vec::with_capacity(len * batch.len());
    let mut segs = Vec::with_capacity(len * batch.len());
    for p in batch {
        ids.extend_from_slice(&p.ids[..len]);
        segs.extend_from_slice(&p.segs[..len]);
    }
    (ids, segs, len)
}

/// Outputs of the head for one batch: class logits, or start/end position
/// logits `[batch × len]` with positions outside the passage set very low.
fn head_forward(s: &mut Session<'_, f32>, head: &[Var], kind: TaskKind, batch: &[&Packed], dropout: f64) -> Result<(Var, Option<Var>)> {
    let (ids, segs, len) = batch_inputs(batch);
    let hl = s.hidden(&ids, &segs, len)?;
    match kind {
        TaskKind::SingleSentenceCls | TaskKind::SentencePairCls => {
            let cls: Vec<usize> = (0..batch.len()).map(|b| b * len).collect();
            let pooled = s.graph.gather_rows(hl, &cls)?;
            let pooled = s.dropout(pooled, dropout);
            let y = s.graph.matmul(pooled, head[0], false)?;
            Ok((s.graph.add_bias(y, head[1])?, None))
        }
        TaskKind::SpanExtraction => {
            let mut mask = vec![-1e4f32; batch.len() * len];
            for (b, p) in batch.iter().enumerate() {
                for i in p.passage.0..(p.passage.0 + p.passage.1).min(len) {
                    mask[b * len + i] = 0.0;
                }
            }
            let mask = s.graph.constant(Tensor::new(vec![batch.len(), len], mask)?);
            let mut out = Vec::new();
            for (w, bias) in [(head[0], head[1]), (head[2], head[3])] {
                let y = s.graph.matmul(hl, w, false)?;
                let y = s.graph.add_bias(y, bias)?;
                let y = s.graph.reshape(y, &[batch.len(), len])?;
                out.push(s.graph.add(y, mask)?);
            }
            Ok((out[0], Some(out[1])))
        }
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Best `(start, end)` with `start <= end < start + MAX_ANSWER_LEN` inside
/// the passage, by summed score.
fn best_span(start: &[f32], end: &[f32], passage: (usize, usize)) -> (usize, usize) {
    let (lo, n) = passage;
    let hi = (lo + n).min(start.len());
    let mut best = (lo, lo);
    let mut score = f32::NEG_INFINITY;
    for i in lo..hi {
        for j in i..hi.min(i + MAX_ANSWER_LEN) {
            let v = start[i] + end[j];
            if v > score {
                score = v;
                best = (i, j);
            }
        }
    }
    best
}

fn token_f1(pred: &[u32], gold: &[u32]) -> f64 {
    let mut counts: HashMap<u32, isize> = HashMap::new();
    for &t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for &t in pred {
        if let Some(c) = counts.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

fn evaluate_packed(params: &ModelParams<f32>, head: &TaskHead, kind: TaskKind, dev: &[Packed]) -> Result<DevMetric> {
    let (mut correct, mut em, mut f1) = (0usize, 0.0, 0.0);
    for chunk in dev.chunks(64) {
        let refs: Vec<&Packed> = chunk.iter().collect();
        let mut s = Session::new(params, None);
        let hv: Vec<Var> = head.tensors().into_iter().map(|t| s.graph.constant(t.clone())).collect();
        let (a, b) = head_forward(&mut s, &hv, kind, &refs, 0.0)?;
        for (r, p) in chunk.iter().enumerate() {
            match p.target {
                TaskTarget::Class(c) => correct += usize::from(argmax(s.value(a).row(r)) == c),
                TaskTarget::Span { start, end } => {
                    let b = b.expect("span logits");
                    let (ps, pe) = best_span(s.value(a).row(r), s.value(b).row(r), p.passage);
                    let (gs, ge) = (p.passage.0 + start, p.passage.0 + end);
                    em += f64::from(u8::from(ps == gs && pe == ge));
                    f1 += token_f1(&p.ids[ps..=pe], &p.ids[gs..=ge]);
                }
            }
        }
    }
    let n = dev.len() as f64;
    Ok(match kind {
        TaskKind::SpanExtraction => DevMetric::Span { exact_match: em / n, f1: f1 / n },
        _ => DevMetric::Accuracy(correct as f64 / n),
    })
}

/// Dev metric of an already fine-tuned model.
pub fn evaluate_task(params: &ModelParams<f32>, head: &TaskHead, task: &FinetuneTask) -> Result<DevMetric> {
    let ck = Checkpoint::new(params.clone());
    let (_, dev) = task.packed(&ck)?;
    evaluate_packed(params, head, task.kind, &dev)
}

fn init_head(kind: TaskKind, hidden: usize, num_labels: usize, std: f64, seed: u64) -> TaskHead {
    let mut r = rng::stream(seed, 0);
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut normal = |shape: &[usize]| Tensor::from_fn(shape, |_| dist.sample(&mut r) as f32);
    match kind {
        TaskKind::SpanExtraction => TaskHead::Span {
            start_w: normal(&[hidden, 1]),
            start_b: Tensor::zeros(&[1]),
            end_w: normal(&[hidden, 1]),
            end_b: Tensor::zeros(&[1]),
        },
        _ => TaskHead::Cls { w: normal(&[hidden, num_labels]), b: Tensor::zeros(&[num_labels]) },
    }
}

const HEAD_STREAM: u64 = 11;
const SHUFFLE_STREAM: u64 = 12;
const DROPOUT_STREAM: u64 = 13;

/// Trains the whole encoder plus a fresh task head with Adam under the
/// pre-training schedule shape, then scores the dev set.
pub fn finetune(ck: &Checkpoint, task: &FinetuneTask, hyper: &FinetuneHyper, seed: u64) -> Result<FinetuneOutcome> {
    if hyper.batch == 0 || hyper.epochs == 0 || !(hyper.lr > 0.0) || !(0.0..1.0).contains(&hyper.dropout) {
        return Err(Error::Config(format!("invalid fine-tuning hyper-parameters {hyper:?}")));
    }
    let (train, dev) = task.packed(ck)?;
    let mut params = ck.params.clone();
    params.config.dropout = hyper.dropout;
    let cfg = params.config.clone();
    let mut head = init_head(task.kind, cfg.hidden, task.num_labels, cfg.init_std, rng::mix(seed, HEAD_STREAM));

    let per_epoch = train.len().div_ceil(hyper.batch);
    let total = per_epoch * hyper.epochs;
    let adam_cfg = AdamConfig { lr_peak: hyper.lr, total_steps: total, ..AdamConfig::default() };
    let mut shapes: Vec<Vec<usize>> = params.weights.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
    shapes.extend(head.tensors().iter().map(|t| t.shape().to_vec()));
    let mut adam = AdamState::<f32>::new(adam_cfg, shapes.iter().map(Vec::as_slice));

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng::stream(rng::mix(seed, SHUFFLE_STREAM), epoch as u64));
        for idx in order.chunks(hyper.batch) {
            step += 1;
            let batch: Vec<&Packed> = idx.iter().map(|&i| &train[i]).collect();
            let drop_rng = rng::stream(rng::mix(seed, DROPOUT_STREAM), step);
            let (enc_grads, head_grads) = {
                let mut s = Session::new(&params, Some(drop_rng));
                let hv: Vec<Var> = head.tensors().into_iter().map(|t| s.graph.param(t.clone())).collect();
                let (a, b) = head_forward(&mut s, &hv, task.kind, &batch, hyper.dropout)?;
                let loss = match b {
                    None => {
                        let labels: Vec<usize> = batch.iter().map(|p| match p.target {
                            TaskTarget::Class(c) => c,
                            TaskTarget::Span { .. } => 0,
                        }).collect();
                        s.graph.cross_entropy(a, &labels)?
                    }
                    Some(b) => {
                        let (mut st, mut en) = (Vec::new(), Vec::new());
                        for p in &batch {
                            if let TaskTarget::Span { start, end } = p.target {
                                st.push(p.passage.0 + start);
                                en.push(p.passage.0 + end);
                            }
                        }
                        let ls = s.graph.cross_entropy(a, &st)?;
                        let le = s.graph.cross_entropy(b, &en)?;
                        let sum = s.graph.add(ls, le)?;
                        s.graph.scale(sum, 0.5)
                    }
                };
                let l = s.value(loss).item();
                if !l.is_finite() {
                    return Err(Error::Diverged { step: step as usize, loss: l as f64 });
                }
                let (w, g) = s.gradients(loss)?;
                let hg: Vec<Tensor<f32>> = hv.iter().map(|&v| g.wrt(&s.graph, v)).collect();
                (w, hg)
            };
            let mut grads: Vec<Tensor<f32>> = enc_grads.named().into_iter().map(|(_, g)| g.clone()).collect();
            grads.extend(head_grads);
            let mut slots: Vec<ParamSlot<'_, f32>> = params
                .weights
                .named_mut()
                .into_iter()
                .map(|(_, t)| t)
                .chain(head.tensors_mut())
                .map(|t| {
                    let decay = t.rank() == 2;
                    ParamSlot { value: t, decay }
                })
                .collect();
            adam.update(&mut slots, &grads)?;
        }
    }
    let dev_metric = evaluate_packed(&params, &head, task.kind, &dev)?;
    Ok(FinetuneOutcome { params, head, dev: dev_metric, steps: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::{CLS, SEP};

    fn ck() -> Checkpoint {
        let cfg = ModelConfig { layers: 1, hidden: 16, heads: 2, vocab_size: 20, max_len: 24, ..Default::default() };
        Checkpoint::new(ModelParams::init(&cfg, &mut rng::from_seed(0)).unwrap())
    }

    fn cls_task(n: usize) -> FinetuneTask {
        // Label = whether token 6 appears.
        let ex = |i: usize| {
            let has = i % 2 == 0;
            let first: Vec<u32> = (0..5).map(|j| if has && j == i % 5 { 6 } else { 7 + ((i + j) % 10) as u32 }).collect();
            FinetuneExample { first, second: None, target: TaskTarget::Class(usize::from(has)) }
        };
        FinetuneTask {
            name: "has6".into(),
            kind: TaskKind::SingleSentenceCls,
            num_labels: 2,
            train: (0..n).map(ex).collect(),
            dev: (n..n + 40).map(ex).collect(),
            vocab_fingerprint: None,
        }
    }

    #[test]
    fn empty_training_set_errors() {
        let mut t = cls_task(10);
        t.train.clear();
        assert!(finetune(&ck(), &t, &FinetuneHyper::default(), 0).is_err());
    }

    #[test]
    fn incompatible_vocabulary_errors() {
        let mut t = cls_task(10);
        t.train[0].first[0] = 25;
        assert!(matches!(finetune(&ck(), &t, &FinetuneHyper::default(), 0), Err(Error::Incompatible(_))));
        let mut t = cls_task(10);
        t.vocab_fingerprint = Some(1);
        let mut c = ck();
        c.meta.insert("vocab_fingerprint".into(), format!("{:016x}", 2));
        assert!(matches!(finetune(&c, &t, &FinetuneHyper::default(), 0), Err(Error::Incompatible(_))));
    }

    #[test]
    fn single_sentence_packing_uses_segment_zero() {
        let ex = FinetuneExample { first: vec![7, 8, 9], second: None, target: TaskTarget::Class(0) };
        let (ids, segs) = pack_task_example(&ex, 8).unwrap();
        assert_eq!(&ids[..5], &[CLS, 7, 8, 9, SEP]);
        assert!(segs.iter().all(|&s| s == 0));
    }

    #[test]
    fn learns_a_keyword_task() {
        let t = cls_task(200);
        let out = finetune(&ck(), &t, &FinetuneHyper { batch: 16, lr: 3e-3, epochs: 4, dropout: 0.0 }, 1).unwrap();
        assert_eq!(out.steps, 4 * 13);
        assert!(out.dev.primary() > 0.9, "{:?}", out.dev);
        assert_eq!(evaluate_task(&out.params, &out.head, &t).unwrap(), out.dev);
    }

    #[test]
    fn one_token_answer_exact_match_rule() {
        let start = [0.0, 0.1, 5.0, 0.2, 0.0];
        let end = [0.0, 0.3, 4.0, 0.1, 9.0];
        // Position 4 lies outside the passage (1..4).
        assert_eq!(best_span(&start, &end, (1, 3)), (2, 2));
        let end2 = [0.0, 0.3, 1.0, 4.0, 0.0];
        assert_eq!(best_span(&start, &end2, (1, 3)), (2, 3));
    }

    #[test]
    fn span_f1() {
        assert_eq!(token_f1(&[5, 6], &[5, 6]), 1.0);
        assert_eq!(token_f1(&[7], &[5, 6]), 0.0);
        assert!((token_f1(&[5, 6, 7], &[6]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn span_task_learns_marker_position() {
        // Answer is the token right after marker 6 in the passage.
        let ex = |i: usize| {
            let k = i % 6;
            let passage: Vec<u32> = (0..8).map(|j| if j == k { 6 } else { 7 + ((i * 3 + j) % 11) as u32 }).collect();
            FinetuneExample { first: vec![6], second: Some(passage), target: TaskTarget::Span { start: k + 1, end: k + 1 } }
        };
        let t = FinetuneTask {
            name: "after6".into(),
            kind: TaskKind::SpanExtraction,
            num_labels: 0,
            train: (0..240).map(ex).collect(),
            dev: (240..300).map(ex).collect(),
            vocab_fingerprint: None,
        };
        let out = finetune(&ck(), &t, &FinetuneHyper { batch: 16, lr: 3e-3, epochs: 20, dropout: 0.0 }, 2).unwrap();
        match out.dev {
            DevMetric::Span { exact_match, f1 } => {
                assert!(exact_match > 0.8, "{exact_match}");
                assert!(f1 >= exact_match);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn span_outside_passage_rejected() {
        let t = FinetuneTask {
            name: "bad".into(),
            kind: TaskKind::SpanExtraction,
            num_labels: 0,
            train: vec![FinetuneExample { first: vec![6], second: Some(vec![7, 8]), target: TaskTarget::Span { start: 1, end: 2 } }],
            dev: vec![FinetuneExample { first: vec![6], second: Some(vec![7, 8]), target: TaskTarget::Span { start: 0, end: 0 } }],
            vocab_fingerprint: None,
        };
        assert!(finetune(&ck(), &t, &FinetuneHyper::default(), 0).is_err());
    }
}
