//! Synthetic corpora with learnable word order and document coherence.
//!
//! Words follow a first-order Markov chain. Every sentence opens with the
//! document's topic token, and the chain continues across sentence
//! boundaries inside a document. Under the banded rule the chain drifts
//! through ordered groups of words ("bands"), so later text in a document
//! tends to use later bands.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::DocumentStore;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionRule {
    /// Each band is split into `layers` equal layers, visited in a cycle.
    /// A word moves to any word of the next layer of its own band, or with
    /// probability `advance` to any word of the same next layer in the next
    /// band. Without `wrap` the last band has no successor band and keeps
    /// all its mass.
    Banded {
        bands: usize,
        layers: usize,
        advance: f64,
        #[serde(default = "yes")]
        wrap: bool,
    },
    /// Every successor equally likely.
    Uniform,
    /// Word `i` is always followed by word `i + 1` (cyclically).
    Deterministic,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartBand {
    /// Documents start in band 0.
    First,
    /// Documents start at a uniformly drawn word.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub words: usize,
    pub topics: usize,
    pub documents: usize,
    /// Inclusive range of sentences per document.
    pub sentences_per_doc: (usize, usize),
    /// Inclusive range of chain words per sentence (topic token excluded).
    pub sentence_len: (usize, usize),
    pub rule: TransitionRule,
    pub start: StartBand,
    /// Seeds the transition structure, independent of sampling.
    pub language_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            words: 64,
            topics: 16,
            documents: 500,
            sentences_per_doc: (120, 240),
            sentence_len: (5, 9),
            rule: TransitionRule::Banded { bands: 4, layers: 8, advance: 0.05, wrap: true },
            start: StartBand::Uniform,
            language_seed: 17,
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i % CONSONANTS.len()] as char;
    let v = VOWELS[(i / CONSONANTS.len()) % VOWELS.len()] as char;
    format!("{c}{v}")
}

/// Pronounceable, unique, lowercase word for chain index `i`.
fn word_string(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let a = (i * 29 + 3) % n;
    let b = (i / n + i * 11) % n;
    let mut w = format!("{}{}", syllable(a), syllable(b));
    if i >= n * n {
        w.push_str(&syllable(i / (n * n)));
    }
    w
}

fn topic_string(j: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let mut w = format!("x{}", syllable(j % n));
    if j >= n {
        w.push_str(&format!("q{}", syllable(j / n)));
    }
    w
}

/// A fixed synthetic language: word strings, topics, and a transition matrix.
#[derive(Clone, Debug)]
pub struct SyntheticLanguage {
    spec: SyntheticSpec,
    words: Vec<String>,
    topics: Vec<String>,
    /// Row-stochastic, `words × words`.
    transition: Vec<Vec<f64>>,
}

impl SyntheticLanguage {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        if spec.words < 4 {
            return Err(Error::InvalidArgument(format!("synthetic vocabulary {} < 4", spec.words)));
        }
        if spec.topics == 0 || spec.documents == 0 {
            return Err(Error::InvalidArgument("need at least one topic and one document".into()));
        }
        let (s0, s1) = spec.sentences_per_doc;
        let (l0, l1) = spec.sentence_len;
        if s0 == 0 || s0 > s1 || l0 == 0 || l0 > l1 {
            return Err(Error::InvalidArgument("empty or inverted length ranges".into()));
        }
        let n = spec.words;
        let mut rng = rng::stream(spec.language_seed, 0);
        let mut transition = vec![vec![0.0; n]; n];
        match spec.rule {
            TransitionRule::Uniform => {
                for row in &mut transition {
                    row.iter_mut().for_each(|p| *p = 1.0 / n as f64);
                }
            }
            TransitionRule::Deterministic => {
                for (i, row) in transition.iter_mut().enumerate() {
                    row[(i + 1) % n] = 1.0;
                }
            }
            TransitionRule::Banded { bands, layers, advance, wrap } => {
                if bands == 0 || layers == 0 || n % (bands * layers) != 0 || !(0.0..1.0).contains(&advance) {
                    return Err(Error::InvalidArgument(format!(
                        "banded rule needs bands * layers dividing {n} and 0 <= advance < 1"
                    )));
                }
                let size = n / bands;
                let width = size / layers;
                // Layers are consecutive runs of a random order per band.
                let orders: Vec<Vec<usize>> = (0..bands)
                    .map(|b| {
                        let mut m: Vec<usize> = (b * size..(b + 1) * size).collect();
                        m.shuffle(&mut rng);
                        m
                    })
                    .collect();
                let layer = |band: usize, l: usize| &orders[band][(l % layers) * width..(l % layers + 1) * width];
                for band in 0..bands {
                    let (next_band, advance) = match (band + 1 < bands, wrap) {
                        (true, _) => (band + 1, advance),
                        (false, true) => (0, advance),
                        (false, false) => (band, 0.0),
                    };
                    for l in 0..layers {
                        for &i in layer(band, l) {
                            for &j in layer(band, l + 1) {
                                transition[i][j] += (1.0 - advance) / width as f64;
                            }
                            for &j in layer(next_band, l + 1) {
                                transition[i][j] += advance / width as f64;
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            words: (0..n).map(word_string).collect(),
            topics: (0..spec.topics).map(topic_string).collect(),
            transition,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn word_index(&self, w: &str) -> Option<usize> {
        self.words.iter().position(|x| x == w)
    }

    fn step(&self, from: usize, rng: &mut Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let row = &self.transition[from];
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    fn start_word(&self, rng: &mut Rng) -> usize {
        match (self.spec.start, self.spec.rule) {
            (StartBand::First, TransitionRule::Banded { bands, .. }) => rng.gen_range(0..self.spec.words / bands),
            _ => rng.gen_range(0..self.spec.words),
        }
    }

    /// One document as chain-word indices per sentence, plus its topic.
    pub fn generate_indices(&self, rng: &mut Rng) -> (usize, Vec<Vec<usize>>) {
        let topic = rng.gen_range(0..self.topics.len());
        let (s0, s1) = self.spec.sentences_per_doc;
        let (l0, l1) = self.spec.sentence_len;
        let n_sent = rng.gen_range(s0..=s1);
        let mut state = self.start_word(rng);
        let mut first = true;
        let mut sentences = Vec::with_capacity(n_sent);
        for _ in 0..n_sent {
            let len = rng.gen_range(l0..=l1);
            let mut s = Vec::with_capacity(len);
            for _ in 0..len {
                if !first {
                    state = self.step(state, rng);
                }
                first = false;
                s.push(state);
            }
            sentences.push(s);
        }
        (topic, sentences)
    }

    pub fn render(&self, topic: usize, sentence: &[usize]) -> String {
        let mut s = self.topics[topic].clone();
        for &w in sentence {
            s.push(' ');
            s.push_str(&self.words[w]);
        }
        s
    }

    pub fn generate(&self, documents: usize, rng: &mut Rng) -> Result<DocumentStore> {
        let docs = (0..documents)
            .map(|_| {
                let (topic, sents) = self.generate_indices(rng);
                sents.iter().map(|s| self.render(topic, s)).collect()
            })
            .collect();
        DocumentStore::new(docs)
    }

    /// Log-probability of a word sequence under the chain (first word free).
    pub fn log_likelihood(&self, seq: &[usize]) -> f64 {
        seq.windows(2).map(|w| self.transition[w[0]][w[1]].ln()).sum()
    }
}

/// Builds the language described by `spec` and samples `spec.documents`
/// documents from it.
pub fn make_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<DocumentStore> {
    SyntheticLanguage::new(spec)?.generate(spec.documents, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use std::collections::HashSet;

    #[test]
    fn word_strings_are_unique_and_alphanumeric() {
        let words: HashSet<String> = (0..3000).map(word_string).collect();
        assert_eq!(words.len(), 3000);
        let topics: HashSet<String> = (0..200).map(topic_string).collect();
        assert_eq!(topics.len(), 200);
        assert!(words.is_disjoint(&topics));
        assert!(words.iter().chain(&topics).all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn degenerate_vocab_rejected() {
        let spec = SyntheticSpec { words: 3, rule: TransitionRule::Uniform, ..Default::default() };
        assert!(make_synthetic(&spec, &mut from_seed(0)).is_err());
    }

    #[test]
    fn rows_are_stochastic() {
        for rule in [
            TransitionRule::Uniform,
            TransitionRule::Deterministic,
            SyntheticSpec::default().rule,
        ] {
            let lang = SyntheticLanguage::new(&SyntheticSpec { rule, ..Default::default() }).unwrap();
            for row in lang.transition() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_chain_is_fully_predictable() {
        let spec = SyntheticSpec { rule: TransitionRule::Deterministic, documents: 20, ..Default::default() };
        let lang = SyntheticLanguage::new(&spec).unwrap();
        let mut rng = from_seed(5);
        for _ in 0..20 {
            let (_, sents) = lang.generate_indices(&mut rng);
            let flat: Vec<usize> = sents.concat();
            for w in flat.windows(2) {
                assert_eq!(w[1], (w[0] + 1) % spec.words);
            }
        }
    }

    #[test]
    fn sentences_start_with_topic() {
        let spec = SyntheticSpec { documents: 5, ..Default::default() };
        let lang = SyntheticLanguage::new(&spec).unwrap();
        let store = lang.generate(5, &mut from_seed(1)).unwrap();
        for doc in store.documents() {
            let topic = doc[0].split(' ').next().unwrap();
            assert!(lang.topics().iter().any(|t| t == topic));
            assert!(doc.iter().all(|s| s.starts_with(topic)));
        }
    }
}
