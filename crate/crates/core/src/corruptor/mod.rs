//! Turns sentence pairs into corrupted pre-training examples.
//!
//! The pipeline is `pack → apply_masking → select_and_shuffle_trigrams`.
//! Masked and shuffled positions are disjoint, and neither ever points at
//! `[CLS]`, `[SEP]` or `[PAD]`.

mod dump;
mod stats;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use dump::{read_examples, write_examples, DUMP_MAGIC, DUMP_VERSION};
pub use stats::{collect_corruption_stats, order_blind_accuracy, Check, CorruptionStats};

use crate::corpus::{SentenceLabel, SentencePair};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::{is_special, CLS, MASK, NUM_SPECIALS, PAD, SEP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub mask_rate: f64,
    pub mask_token_prob: f64,
    pub random_replace_prob: f64,
    pub keep_prob: f64,
    pub trigram_rate: f64,
    /// Length of shuffled subsequences.
    pub k: usize,
    pub max_len: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            mask_token_prob: 0.8,
            random_replace_prob: 0.1,
            keep_prob: 0.1,
            trigram_rate: 0.05,
            k: 3,
            max_len: 64,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let split = self.mask_token_prob + self.random_replace_prob + self.keep_prob;
        if (split - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mask replacement probabilities sum to {split}")));
        }
        for (name, p) in [("mask_rate", self.mask_rate), ("trigram_rate", self.trigram_rate)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("{name} = {p} must lie in (0, 1)")));
            }
        }
        for p in [self.mask_token_prob, self.random_replace_prob, self.keep_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.k < 2 {
            return Err(Error::Config("shuffle length k must be at least 2".into()));
        }
        if self.max_len < 8 {
            return Err(Error::Config(format!("max_len {} < 8", self.max_len)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PretrainExample {
    pub input_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub mlm_targets: BTreeMap<usize, u32>,
    pub shuffle_targets: BTreeMap<usize, u32>,
    pub sentence_label: SentenceLabel,
}

impl PretrainExample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.input_ids.iter().take_while(|&&t| t != PAD).count()
    }

    /// Writes every target id back into its position.
    pub fn restored(&self) -> Vec<u32> {
        let mut ids = self.input_ids.clone();
        for (&p, &t) in self.mlm_targets.iter().chain(&self.shuffle_targets) {
            ids[p] = t;
        }
        ids
    }

    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("example invariant: {m}")));
        if self.input_ids.first() != Some(&CLS) {
            return bad("position 0 is not [CLS]");
        }
        if self.input_ids.len() != self.segment_ids.len() {
            return bad("segment length");
        }
        let seps: Vec<usize> = self.input_ids.iter().enumerate().filter(|(_, &t)| t == SEP).map(|(i, _)| i).collect();
        if seps.len() != 2 {
            return bad("not exactly two [SEP]");
        }
        for (i, &s) in self.segment_ids.iter().enumerate() {
            let want = u8::from(i > seps[0] && i <= seps[1]);
            if s != want {
                return bad("segment ids");
            }
        }
        for (&p, &t) in self.mlm_targets.iter().chain(&self.shuffle_targets) {
            if p >= self.input_ids.len() || is_special(self.restored()[p]) || is_special(t) {
                return bad("target on a special position");
            }
        }
        if self.mlm_targets.keys().any(|p| self.shuffle_targets.contains_key(p)) {
            return bad("overlapping targets");
        }
        Ok(())
    }
}

/// `[CLS] first [SEP] second [SEP]` padded to `max_len`. Segment ids are 0
/// through the first `[SEP]` and 1 after it; padding is segment 0.
pub fn pack(first: &[u32], second: &[u32], max_len: usize) -> Result<(Vec<u32>, Vec<u8>)> {
    if max_len < 8 {
        return Err(Error::InvalidArgument(format!("max_len {max_len} < 8")));
    }
    if first.is_empty() || second.is_empty() {
        return Err(Error::InvalidArgument("empty side in sentence pair".into()));
    }
    let (mut a, mut b) = (first.len(), second.len());
    while a + b > max_len - 3 {
        if a > b {
            a -= 1;
        } else {
            b -= 1;
        }
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend_from_slice(&first[..a]);
    ids.push(SEP);
    ids.extend_from_slice(&second[..b]);
    ids.push(SEP);
    let mut seg = vec![0u8; a + 2];
    seg.resize(ids.len(), 1);
    ids.resize(max_len, PAD);
    seg.resize(max_len, 0);
    Ok((ids, seg))
}

/// `[CLS] text [SEP]` padded to `max_len`, all segment 0.
pub fn pack_single(text: &[u32], max_len: usize) -> Result<(Vec<u32>, Vec<u8>)> {
    if max_len < 8 {
        return Err(Error::InvalidArgument(format!("max_len {max_len} < 8")));
    }
    if text.is_empty() {
        return Err(Error::InvalidArgument("empty sentence".into()));
    }
    let n = text.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend_from_slice(&text[..n]);
    ids.push(SEP);
    ids.resize(max_len, PAD);
    Ok((ids, vec![0; max_len]))
}

/// How a selected masking position was corrupted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// Independent Bernoulli(`mask_rate`) selection of non-special positions,
/// then 80/10/10 replacement. Returns per-position actions as well.
pub fn apply_masking_detailed(
    input_ids: &[u32],
    cfg: &CorruptionConfig,
    vocab_size: usize,
    rng: &mut Rng,
) -> (Vec<u32>, BTreeMap<usize, u32>, Vec<(usize, MaskAction)>) {
    let mut ids = input_ids.to_vec();
    let mut targets = BTreeMap::new();
    let mut actions = Vec::new();
    for (i, &t) in input_ids.iter().enumerate() {
        if is_special(t) || !rng.gen_bool(cfg.mask_rate) {
            continue;
        }
        targets.insert(i, t);
        let u: f64 = rng.gen();
        let action = if u < cfg.mask_token_prob {
            ids[i] = MASK;
            MaskAction::Mask
        } else if u < cfg.mask_token_prob + cfg.random_replace_prob && vocab_size > NUM_SPECIALS as usize {
            ids[i] = rng.gen_range(NUM_SPECIALS..vocab_size as u32);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        actions.push((i, action));
    }
    (ids, targets, actions)
}

pub fn apply_masking(
    input_ids: &[u32],
    cfg: &CorruptionConfig,
    vocab_size: usize,
    rng: &mut Rng,
) -> (Vec<u32>, BTreeMap<usize, u32>) {
    let (ids, targets, _) = apply_masking_detailed(input_ids, cfg, vocab_size, rng);
    (ids, targets)
}

/// Outcome of the trigram scan, for rate statistics.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShuffleStats {
    /// Eligible starts at which a selection draw was made.
    pub draws: usize,
    /// Start positions of selected runs.
    pub selected: Vec<usize>,
}

/// Left-to-right scan over runs of `k` consecutive eligible positions.
/// Eligible means non-special and not already masked; specials bound the
/// segments, so runs never cross `[SEP]` or enter padding. Each eligible
/// start is selected with probability `trigram_rate`; a selected run is
/// permuted uniformly over all `k!` orders (identity included) and the scan
/// resumes after it.
pub fn select_and_shuffle_trigrams_detailed(
    input_ids: &[u32],
    mlm_targets: &BTreeMap<usize, u32>,
    cfg: &CorruptionConfig,
    rng: &mut Rng,
) -> (Vec<u32>, BTreeMap<usize, u32>, ShuffleStats) {
    let k = cfg.k;
    let mut ids = input_ids.to_vec();
    let mut targets = BTreeMap::new();
    let mut stats = ShuffleStats::default();
    let eligible = |p: usize| !is_special(input_ids[p]) && !mlm_targets.contains_key(&p);
    let mut i = 0;
    while i + k <= input_ids.len() {
        if !(i..i + k).all(eligible) {
            i += 1;
            continue;
        }
        stats.draws += 1;
        if rng.gen_bool(cfg.trigram_rate) {
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(rng);
            for (j, &src) in perm.iter().enumerate() {
                ids[i + j] = input_ids[i + src];
                targets.insert(i + j, input_ids[i + j]);
            }
            stats.selected.push(i);
            i += k;
        } else {
            i += 1;
        }
    }
    (ids, targets, stats)
}

pub fn select_and_shuffle_trigrams(
    input_ids: &[u32],
    mlm_targets: &BTreeMap<usize, u32>,
    cfg: &CorruptionConfig,
    rng: &mut Rng,
) -> (Vec<u32>, BTreeMap<usize, u32>) {
    let (ids, targets, _) = select_and_shuffle_trigrams_detailed(input_ids, mlm_targets, cfg, rng);
    (ids, targets)
}

/// Applies permutation `perm` (new position j takes old position perm[j])
/// to the run starting at `start`.
pub fn permute_run(ids: &mut [u32], start: usize, perm: &[usize]) {
    let orig: Vec<u32> = ids[start..start + perm.len()].to_vec();
    for (j, &src) in perm.iter().enumerate() {
        ids[start + j] = orig[src];
    }
}

/// Per-example diagnostics collected alongside the example.
#[derive(Clone, Debug, Default)]
pub struct CorruptionTrace {
    pub mask_actions: Vec<(usize, MaskAction)>,
    pub shuffle: ShuffleStats,
    pub packed: Vec<u32>,
}

pub fn make_example_traced(
    pair: &SentencePair,
    cfg: &CorruptionConfig,
    vocab_size: usize,
    shuffle: bool,
    rng: &mut Rng,
) -> Result<(PretrainExample, CorruptionTrace)> {
    let (packed, segment_ids) = pack(&pair.first, &pair.second, cfg.max_len)?;
    let (masked, mlm_targets, mask_actions) = apply_masking_detailed(&packed, cfg, vocab_size, rng);
    let (input_ids, shuffle_targets, stats) = if shuffle {
        select_and_shuffle_trigrams_detailed(&masked, &mlm_targets, cfg, rng)
    } else {
        (masked, BTreeMap::new(), ShuffleStats::default())
    };
    let ex = PretrainExample { input_ids, segment_ids, mlm_targets, shuffle_targets, sentence_label: pair.label };
    Ok((ex, CorruptionTrace { mask_actions, shuffle: stats, packed }))
}

/// `pack → apply_masking → select_and_shuffle_trigrams`.
pub fn make_example(pair: &SentencePair, cfg: &CorruptionConfig, vocab_size: usize, rng: &mut Rng) -> Result<PretrainExample> {
    make_example_traced(pair, cfg, vocab_size, true, rng).map(|(e, _)| e)
}
