//! Monte Carlo counts over freshly corrupted examples.

use std::fmt;

use super::{make_example_traced, CorruptionConfig, MaskAction, PretrainExample};
use crate::corpus::{sample_pair, TokenizedStore};
use crate::error::Result;
use crate::rng;
use crate::tokenizer::is_special;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorruptionStats {
    pub examples: usize,
    /// Non-special packed positions.
    pub eligible_positions: usize,
    pub masked_positions: usize,
    /// Counts of mask, random and keep replacements.
    pub actions: [usize; 3],
    pub trigram_draws: usize,
    pub trigrams_selected: usize,
    /// Counts of NEXT, PREV and RAND labels.
    pub labels: [usize; 3],
}

/// One validator line: `value` should lie within `target ± tol`.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tol: f64,
}

impl Check {
    pub fn ok(&self) -> bool {
        (self.value - self.target).abs() <= self.tol
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<18} {:.4}  (target {:.4} ± {:.4})  {}",
            self.name,
            self.value,
            self.target,
            self.tol,
            if self.ok() { "ok" } else { "OUT OF RANGE" }
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl CorruptionStats {
    pub fn mask_fraction(&self) -> f64 {
        ratio(self.masked_positions, self.eligible_positions)
    }

    pub fn replacement_split(&self) -> [f64; 3] {
        self.actions.map(|c| ratio(c, self.masked_positions))
    }

    pub fn trigram_rate(&self) -> f64 {
        ratio(self.trigrams_selected, self.trigram_draws)
    }

    pub fn label_frequencies(&self) -> [f64; 3] {
        self.labels.map(|c| ratio(c, self.examples))
    }

    /// The configured rates with fixed tolerances.
    pub fn checks(&self, cfg: &CorruptionConfig) -> Vec<Check> {
        let check = |name: &str, value, target, tol| Check { name: name.into(), value, target, tol };
        let split = self.replacement_split();
        let labels = self.label_frequencies();
        vec![
            check("mask fraction", self.mask_fraction(), cfg.mask_rate, 0.005),
            check("trigram rate", self.trigram_rate(), cfg.trigram_rate, 0.005),
            check("replace [MASK]", split[0], cfg.mask_token_prob, 0.01),
            check("replace random", split[1], cfg.random_replace_prob, 0.01),
            check("replace keep", split[2], cfg.keep_prob, 0.01),
            check("label NEXT", labels[0], 1.0 / 3.0, 0.02),
            check("label PREV", labels[1], 1.0 / 3.0, 0.02),
            check("label RAND", labels[2], 1.0 / 3.0, 0.02),
        ]
    }
}

/// Corrupts `n` three-way pairs drawn from `store`; example `i` uses its own
/// stream of `seed`.
pub fn collect_corruption_stats(
    store: &TokenizedStore,
    cfg: &CorruptionConfig,
    vocab_size: usize,
    n: usize,
    seed: u64,
) -> Result<CorruptionStats> {
    cfg.validate()?;
    let mut s = CorruptionStats::default();
    for i in 0..n {
        let rng = &mut rng::stream(seed, i as u64);
        let pair = sample_pair(store, cfg.max_len - 3, rng)?;
        let (ex, trace) = make_example_traced(&pair, cfg, vocab_size, true, rng)?;
        s.examples += 1;
        s.eligible_positions += trace.packed.iter().filter(|&&t| !is_special(t)).count();
        s.masked_positions += ex.mlm_targets.len();
        for (_, a) in &trace.mask_actions {
            let k = match a {
                MaskAction::Mask => 0,
                MaskAction::Random => 1,
                MaskAction::Keep => 2,
            };
            s.actions[k] += 1;
        }
        s.trigram_draws += trace.shuffle.draws;
        s.trigrams_selected += trace.shuffle.selected.len();
        s.labels[ex.sentence_label.index()] += 1;
    }
    Ok(s)
}

/// Accuracy on the shuffle targets of the best predictor that knows each
/// shuffled run's tokens but not their order. Permutations are uniform, so
/// at every position of a run the original token is uniform over the run;
/// the best guess is the run's most frequent token, right `count / k` of
/// the time.
pub fn order_blind_accuracy(examples: &[PretrainExample], k: usize) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in examples {
        // Runs never overlap, so sorted positions split into whole runs.
        let ids: Vec<u32> = ex.shuffle_targets.values().copied().collect();
        for run in ids.chunks(k) {
            let best = run.iter().map(|t| run.iter().filter(|u| *u == t).count()).max().unwrap_or(0);
            hits += best;
            total += run.len();
        }
    }
    ratio(hits, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentenceLabel;
    use std::collections::BTreeMap;

    #[test]
    fn order_blind_accuracy_counts_repeats() {
        let ex = |targets: &[(usize, u32)]| PretrainExample {
            input_ids: vec![],
            segment_ids: vec![],
            mlm_targets: BTreeMap::new(),
            shuffle_targets: targets.iter().copied().collect(),
            sentence_label: SentenceLabel::Next,
        };
        let distinct = ex(&[(1, 7), (2, 8), (3, 9)]);
        assert!((order_blind_accuracy(&[distinct.clone()], 3) - 1.0 / 3.0).abs() < 1e-12);
        let repeat = ex(&[(4, 7), (5, 7), (6, 9), (7, 5), (8, 5), (9, 5)]);
        assert!((order_blind_accuracy(&[repeat], 3) - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(order_blind_accuracy(&[ex(&[])], 3), 0.0);
    }

    #[test]
    fn check_tolerance_is_inclusive() {
        let c = Check { name: "x".into(), value: 0.375, target: 0.25, tol: 0.125 };
        assert!(c.ok());
        assert!(!Check { value: 0.376, ..c.clone() }.ok());
        assert!(c.to_string().ends_with("ok"));
    }

    #[test]
    fn counts_add_up() {
        let docs: Vec<Vec<Vec<u32>>> = (0..6).map(|d| (0..5).map(|s| (0..7).map(|t| 5 + (d + s + t) as u32 % 20).collect()).collect()).collect();
        let store = TokenizedStore::from_documents(docs);
        let cfg = CorruptionConfig { max_len: 32, ..Default::default() };
        let s = collect_corruption_stats(&store, &cfg, 25, 200, 3).unwrap();
        assert_eq!(s.examples, 200);
        assert_eq!(s.labels.iter().sum::<usize>(), 200);
        assert_eq!(s.actions.iter().sum::<usize>(), s.masked_positions);
        assert!(s.masked_positions < s.eligible_positions);
        assert_eq!(s, collect_corruption_stats(&store, &cfg, 25, 200, 3).unwrap());
    }
}
