//! Document stores and three-way sentence-pair sampling.

mod synthetic;

use std::fmt;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use synthetic::{make_synthetic, StartBand, SyntheticLanguage, SyntheticSpec, TransitionRule};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::{tokenize, Vocab};

/// Ordered sentences grouped into documents.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocumentStore {
    documents: Vec<Vec<String>>,
}

impl DocumentStore {
    /// Drops empty sentences and documents; errors if nothing is left.
    pub fn new(documents: Vec<Vec<String>>) -> Result<Self> {
        let documents: Vec<Vec<String>> = documents
            .into_iter()
            .map(|d| d.into_iter().filter(|s| !s.trim().is_empty()).collect::<Vec<_>>())
            .filter(|d| !d.is_empty())
            .collect();
        if documents.is_empty() {
            return Err(Error::EmptyCorpus("no usable documents".into()));
        }
        Ok(Self { documents })
    }

    pub fn documents(&self) -> &[Vec<String>] {
        &self.documents
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flatten().map(String::as_str)
    }

    /// Corpus text: one sentence per line, blank line between documents.
    pub fn to_text(&self) -> String {
        let docs: Vec<String> = self.documents.iter().map(|d| d.join("\n")).collect();
        let mut s = docs.join("\n\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ingest(&std::fs::read_to_string(path)?)
    }

    pub fn tokenize(&self, vocab: &Vocab) -> TokenizedStore {
        let documents = self
            .documents
            .iter()
            .map(|d| d.iter().map(|s| tokenize(s, vocab)).filter(|t| !t.is_empty()).collect::<Vec<_>>())
            .filter(|d: &Vec<Vec<u32>>| !d.is_empty())
            .collect();
        TokenizedStore { documents }
    }
}

/// Blank-line-separated blocks become documents, one sentence per line.
pub fn ingest(source: &str) -> Result<DocumentStore> {
    let mut docs = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    for line in source.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !cur.is_empty() {
                docs.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(line.to_owned());
        }
    }
    if !cur.is_empty() {
        docs.push(cur);
    }
    DocumentStore::new(docs)
}

/// A document store after tokenization; sentences are non-empty id lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedStore {
    documents: Vec<Vec<Vec<u32>>>,
}

impl TokenizedStore {
    pub fn from_documents(documents: Vec<Vec<Vec<u32>>>) -> Self {
        let documents = documents
            .into_iter()
            .map(|d| d.into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>())
            .filter(|d| !d.is_empty())
            .collect();
        Self { documents }
    }

    pub fn documents(&self) -> &[Vec<Vec<u32>>] {
        &self.documents
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SentenceLabel {
    Next = 0,
    Prev = 1,
    Rand = 2,
}

impl SentenceLabel {
    pub const ALL: [SentenceLabel; 3] = [SentenceLabel::Next, SentenceLabel::Prev, SentenceLabel::Rand];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for SentenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SentenceLabel::Next => "NEXT",
            SentenceLabel::Prev => "PREV",
            SentenceLabel::Rand => "RAND",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub first: Vec<u32>,
    pub second: Vec<u32>,
    pub label: SentenceLabel,
    /// Document of the first span and of the second span.
    pub documents: (usize, usize),
}

/// Which labels `sample_pair` may draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// NEXT / PREV / RAND with probability 1/3 each.
    ThreeWay,
    /// Always the following span.
    NextOnly,
    /// NEXT / PREV with probability 1/2 each.
    Order,
}

const MAX_ANCHOR_DRAWS: usize = 10_000;

/// Samples one sentence pair for the sentence-order objective.
pub fn sample_pair(store: &TokenizedStore, budget: usize, rng: &mut Rng) -> Result<SentencePair> {
    sample_pair_with(store, budget, PairMode::ThreeWay, rng)
}

pub fn sample_pair_with(store: &TokenizedStore, budget: usize, mode: PairMode, rng: &mut Rng) -> Result<SentencePair> {
    if budget < 8 {
        return Err(Error::InvalidArgument(format!("token budget {budget} < 8")));
    }
    let n = store.documents.len();
    if n < 2 && mode == PairMode::ThreeWay {
        return Err(Error::InvalidArgument("pair sampling needs at least 2 documents".into()));
    }
    if n == 0 {
        return Err(Error::EmptyCorpus("empty store".into()));
    }
    let label = match mode {
        PairMode::ThreeWay => SentenceLabel::ALL[rng.gen_range(0..3)],
        PairMode::NextOnly => SentenceLabel::Next,
        PairMode::Order => SentenceLabel::ALL[rng.gen_range(0..2)],
    };
    let second_budget = budget / 2;
    let first_budget = budget - second_budget;

    // The label is fixed; impossible anchors are redrawn.
    for _ in 0..MAX_ANCHOR_DRAWS {
        let d = rng.gen_range(0..n);
        let doc = &store.documents[d];
        let anchor = rng.gen_range(0..doc.len());
        let (first, first_end) = fill_forward(doc, anchor, first_budget);
        let (second, other) = match label {
            SentenceLabel::Next => {
                if first_end >= doc.len() {
                    continue;
                }
                (fill_forward(doc, first_end, second_budget).0, d)
            }
            SentenceLabel::Prev => {
                if anchor == 0 {
                    continue;
                }
                (fill_backward(doc, anchor - 1, second_budget), d)
            }
            SentenceLabel::Rand => {
                let mut r = rng.gen_range(0..n - 1);
                if r >= d {
                    r += 1;
                }
                let other = &store.documents[r];
                let start = rng.gen_range(0..other.len());
                (fill_forward(other, start, second_budget).0, r)
            }
        };
        return Ok(SentencePair { first, second, label, documents: (d, other) });
    }
    Err(Error::InvalidArgument(format!("no document supports a {label} pair")))
}

/// Concatenates sentences from `start` onward while they fit in `budget`.
/// The first sentence is always taken, truncated at its end if needed.
/// Returns the tokens and the index one past the last sentence used.
fn fill_forward(doc: &[Vec<u32>], start: usize, budget: usize) -> (Vec<u32>, usize) {
    let mut out: Vec<u32> = doc[start].iter().copied().take(budget).collect();
    let mut end = start + 1;
    while end < doc.len() && out.len() + doc[end].len() <= budget {
        out.extend_from_slice(&doc[end]);
        end += 1;
    }
    (out, end)
}

/// Concatenates sentences ending at `last` going backward while they fit.
/// A single overlong sentence keeps its tail.
fn fill_backward(doc: &[Vec<u32>], last: usize, budget: usize) -> Vec<u32> {
    let s = &doc[last];
    let mut parts: Vec<&[u32]> = vec![&s[s.len().saturating_sub(budget)..]];
    let mut used = parts[0].len();
    let mut i = last;
    while i > 0 && used + doc[i - 1].len() <= budget {
        i -= 1;
        used += doc[i].len();
        parts.push(&doc[i]);
    }
    parts.into_iter().rev().flatten().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn store(docs: &[&[&[u32]]]) -> TokenizedStore {
        TokenizedStore::from_documents(docs.iter().map(|d| d.iter().map(|s| s.to_vec()).collect()).collect())
    }

    #[test]
    fn ingest_blocks() {
        let s = ingest("a b\nc d\ne f\n\ng h\ni j\nk l\n").unwrap();
        assert_eq!(s.num_documents(), 2);
        assert!(s.documents().iter().all(|d| d.len() == 3));
    }

    #[test]
    fn ingest_only_blank_lines_errors() {
        assert!(matches!(ingest("\n\n   \n"), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn ingest_trailing_blank_lines_normalized() {
        let a = ingest("x\ny\n\nz\n").unwrap();
        let b = ingest("x\ny\n\n\n\nz\n\n\n\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(ingest(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn single_document_store_errors() {
        let s = store(&[&[&[5, 6], &[7, 8]]]);
        assert!(sample_pair(&s, 16, &mut from_seed(0)).is_err());
    }

    #[test]
    fn tiny_budget_errors() {
        let s = store(&[&[&[5, 6], &[7, 8]], &[&[9]]]);
        assert!(sample_pair(&s, 7, &mut from_seed(0)).is_err());
    }

    #[test]
    fn two_sentence_document_never_empty() {
        let s = store(&[&[&[5, 6, 7], &[8, 9, 10]], &[&[11, 12], &[13, 14]]]);
        let mut rng = from_seed(3);
        for _ in 0..2000 {
            let p = sample_pair(&s, 8, &mut rng).unwrap();
            assert!(!p.first.is_empty() && !p.second.is_empty());
            assert!(p.first.len() <= 4 && p.second.len() <= 4);
            match p.label {
                SentenceLabel::Prev => assert!(p.first[0] == 8 || p.first[0] == 13),
                SentenceLabel::Next => assert!(p.first[0] == 5 || p.first[0] == 11),
                SentenceLabel::Rand => assert_ne!(p.documents.0, p.documents.1),
            }
        }
    }

    #[test]
    fn spans_follow_and_precede() {
        let s = store(&[&[&[10, 11], &[12, 13], &[14, 15], &[16, 17]], &[&[20, 21]]]);
        let mut rng = from_seed(9);
        for _ in 0..500 {
            let p = sample_pair(&s, 8, &mut rng).unwrap();
            match p.label {
                SentenceLabel::Next => assert_eq!(p.second[0], p.first[p.first.len() - 1] + 1),
                SentenceLabel::Prev => assert_eq!(p.second[p.second.len() - 1] + 1, p.first[0]),
                SentenceLabel::Rand => {}
            }
        }
    }

    #[test]
    fn backward_fill_keeps_tail_of_long_sentence() {
        let doc = vec![vec![1, 2], vec![3, 4, 5, 6, 7, 8]];
        assert_eq!(fill_backward(&doc, 1, 4), vec![5, 6, 7, 8]);
        assert_eq!(fill_backward(&doc, 1, 8), vec![1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(fill_forward(&doc, 1, 3), (vec![3, 4, 5], 2));
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = store(&[&[&[5, 6], &[7, 8], &[9, 10]], &[&[11, 12], &[13]]]);
        let a: Vec<_> = {
            let mut r = from_seed(42);
            (0..50).map(|_| sample_pair(&s, 8, &mut r).unwrap()).collect()
        };
        let b: Vec<_> = {
            let mut r = from_seed(42);
            (0..50).map(|_| sample_pair(&s, 8, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn next_only_mode() {
        let s = store(&[&[&[5, 6], &[7, 8], &[9, 10]]]);
        let mut r = from_seed(1);
        for _ in 0..100 {
            assert_eq!(sample_pair_with(&s, 8, PairMode::NextOnly, &mut r).unwrap().label, SentenceLabel::Next);
        }
    }
}
