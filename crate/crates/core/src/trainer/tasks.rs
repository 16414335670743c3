//! Small downstream tasks drawn from a synthetic language.
//!
//! * order acceptability: is a single sentence in its original word order,
//!   or have two words at least three positions apart been swapped?
//! * pair order: are two adjacent sentences in document order or swapped?
//! * next-word span: given a word, extract the word that follows it in a
//!   passage.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::finetune::{FinetuneExample, FinetuneTask, TaskKind, TaskTarget};
use crate::corpus::SyntheticLanguage;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tokenizer::{tokenize, Vocab};

/// Swapped words are at least this far apart, so a negative never looks
/// like a shuffled trigram from pre-training.
const MIN_SWAP_DISTANCE: usize = 3;

fn split(mut all: Vec<FinetuneExample>, n_train: usize, name: &str, kind: TaskKind, num_labels: usize, vocab: &Vocab) -> FinetuneTask {
    let dev = all.split_off(n_train);
    FinetuneTask { name: name.into(), kind, num_labels, train: all, dev, vocab_fingerprint: Some(vocab.fingerprint()) }
}

fn random_sentence(lang: &SyntheticLanguage, min_len: usize, rng: &mut Rng) -> Result<(usize, Vec<usize>)> {
    for _ in 0..1000 {
        let (topic, sents) = lang.generate_indices(rng);
        let s = &sents[rng.gen_range(0..sents.len())];
        if s.len() >= min_len {
            return Ok((topic, s.clone()));
        }
    }
    Err(Error::InvalidArgument(format!("language never produces sentences of {min_len}+ words")))
}

/// Swaps two distinct words at least `MIN_SWAP_DISTANCE` apart.
fn swap_distant(words: &[usize], rng: &mut Rng) -> Option<Vec<usize>> {
    let n = words.len();
    let mut pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i + MIN_SWAP_DISTANCE..n).map(move |j| (i, j))).filter(|&(i, j)| words[i] != words[j]).collect();
    pairs.shuffle(rng);
    let &(i, j) = pairs.first()?;
    let mut out = words.to_vec();
    out.swap(i, j);
    Some(out)
}

/// Label 1 for an untouched sentence, 0 for one with a distant swap.
/// Classes are balanced by alternating.
pub fn order_acceptability(lang: &SyntheticLanguage, vocab: &Vocab, n_train: usize, n_dev: usize, seed: u64) -> Result<FinetuneTask> {
    let mut all = Vec::with_capacity(n_train + n_dev);
    for i in 0..n_train + n_dev {
        let rng = &mut rng::stream(seed, i as u64);
        let positive = i % 2 == 0;
        let (topic, words) = loop {
            let (topic, words) = random_sentence(lang, MIN_SWAP_DISTANCE + 1, rng)?;
            if positive {
                break (topic, words);
            }
            if let Some(p) = swap_distant(&words, rng) {
                break (topic, p);
            }
        };
        all.push(FinetuneExample {
            first: tokenize(&lang.render(topic, &words), vocab),
            second: None,
            target: TaskTarget::Class(usize::from(positive)),
        });
    }
    Ok(split(all, n_train, "order_acceptability", TaskKind::SingleSentenceCls, 2, vocab))
}

/// Label 0 for `(s_i, s_{i+1})`, 1 for `(s_{i+1}, s_i)`. Classes alternate.
pub fn pair_order(lang: &SyntheticLanguage, vocab: &Vocab, n_train: usize, n_dev: usize, seed: u64) -> Result<FinetuneTask> {
    let mut all = Vec::with_capacity(n_train + n_dev);
    for i in 0..n_train + n_dev {
        let rng = &mut rng::stream(seed, i as u64);
        let (topic, sents) = loop {
            let (t, s) = lang.generate_indices(rng);
            if s.len() >= 2 {
                break (t, s);
            }
        };
        let k = rng.gen_range(0..sents.len() - 1);
        let a = tokenize(&lang.render(topic, &sents[k]), vocab);
        let b = tokenize(&lang.render(topic, &sents[k + 1]), vocab);
        let swapped = i % 2 == 1;
        let (first, second) = if swapped { (b, a) } else { (a, b) };
        all.push(FinetuneExample { first, second: Some(second), target: TaskTarget::Class(usize::from(swapped)) });
    }
    Ok(split(all, n_train, "pair_order", TaskKind::SentencePairCls, 2, vocab))
}

/// Question: one word. Passage: one or two adjacent sentences in which that
/// word occurs, not last. Answer: the tokens of the word right after its
/// first occurrence. Passages are kept short enough for `max_len`.
pub fn next_word_span(lang: &SyntheticLanguage, vocab: &Vocab, n_train: usize, n_dev: usize, max_len: usize, seed: u64) -> Result<FinetuneTask> {
    let mut all = Vec::with_capacity(n_train + n_dev);
    for i in 0..n_train + n_dev {
        let rng = &mut rng::stream(seed, i as u64);
        let mut attempts = 0;
        let ex = loop {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::InvalidArgument(format!("cannot fit a span example in max_len {max_len}")));
            }
            let (topic, sents) = lang.generate_indices(rng);
            let k = rng.gen_range(0..sents.len());
            let mut words: Vec<usize> = sents[k].clone();
            if k + 1 < sents.len() && rng.gen_bool(0.5) {
                words.extend_from_slice(&sents[k + 1]);
            }
            if words.len() < 2 {
                continue;
            }
            let q = rng.gen_range(0..words.len() - 1);
            let first_occ = words.iter().position(|&w| w == words[q]).expect("present");
            if first_occ + 1 >= words.len() {
                continue;
            }
            let question = tokenize(&lang.words()[words[q]], vocab);
            let mut passage = tokenize(&lang.topics()[topic], vocab);
            let mut span = (0, 0);
            for (j, &w) in words.iter().enumerate() {
                let t = tokenize(&lang.words()[w], vocab);
                if j == first_occ + 1 {
                    span = (passage.len(), passage.len() + t.len() - 1);
                }
                passage.extend(t);
            }
            if question.len() + passage.len() + 3 > max_len {
                continue;
            }
            break FinetuneExample { first: question, second: Some(passage), target: TaskTarget::Span { start: span.0, end: span.1 } };
        };
        all.push(ex);
    }
    Ok(split(all, n_train, "next_word_span", TaskKind::SpanExtraction, 0, vocab))
}

pub const TASK_NAMES: [&str; 3] = ["order_acceptability", "pair_order", "next_word_span"];

/// Builds the task called `name`; `max_len` only bounds span passages.
pub fn build_task(
    name: &str,
    lang: &SyntheticLanguage,
    vocab: &Vocab,
    n_train: usize,
    n_dev: usize,
    max_len: usize,
    seed: u64,
) -> Result<FinetuneTask> {
    match name {
        "order_acceptability" => order_acceptability(lang, vocab, n_train, n_dev, seed),
        "pair_order" => pair_order(lang, vocab, n_train, n_dev, seed),
        "next_word_span" => next_word_span(lang, vocab, n_train, n_dev, max_len, seed),
        _ => Err(Error::InvalidArgument(format!("unknown task {name:?}; expected one of {}", TASK_NAMES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SyntheticSpec;
    use crate::tokenizer::build_vocab;

    fn setup() -> (SyntheticLanguage, Vocab) {
        let spec = SyntheticSpec { documents: 40, ..Default::default() };
        let lang = SyntheticLanguage::new(&spec).unwrap();
        let store = lang.generate(40, &mut rng::from_seed(1)).unwrap();
        let vocab = build_vocab(store.sentences(), 300).unwrap();
        (lang, vocab)
    }

    #[test]
    fn acceptability_classes_alternate() {
        let (lang, vocab) = setup();
        let t = order_acceptability(&lang, &vocab, 30, 10, 4).unwrap();
        assert_eq!((t.train.len(), t.dev.len()), (30, 10));
        let pos = t.train.iter().filter(|e| e.target == TaskTarget::Class(1)).count();
        assert_eq!(pos, 15);
        assert!(t.train.iter().all(|e| e.second.is_none()));
    }

    #[test]
    fn distant_swap_changes_two_far_positions() {
        let mut r = rng::from_seed(3);
        for _ in 0..100 {
            let w = vec![1, 2, 3, 4, 5, 6];
            let p = swap_distant(&w, &mut r).unwrap();
            let diffs: Vec<usize> = (0..6).filter(|&i| p[i] != w[i]).collect();
            assert_eq!(diffs.len(), 2);
            assert!(diffs[1] - diffs[0] >= MIN_SWAP_DISTANCE);
            assert_eq!((p[diffs[0]], p[diffs[1]]), (w[diffs[1]], w[diffs[0]]));
        }
        assert_eq!(swap_distant(&[7, 1, 1, 7], &mut r), None);
        assert_eq!(swap_distant(&[1, 2, 3], &mut r), None);
    }

    #[test]
    fn tasks_by_name() {
        let (lang, vocab) = setup();
        for name in TASK_NAMES {
            assert_eq!(build_task(name, &lang, &vocab, 4, 2, 64, 1).unwrap().name, name);
        }
        assert!(build_task("squad", &lang, &vocab, 4, 2, 64, 1).is_err());
    }

    #[test]
    fn pair_order_swaps_half() {
        let (lang, vocab) = setup();
        let t = pair_order(&lang, &vocab, 20, 20, 5).unwrap();
        let swapped = t.dev.iter().filter(|e| e.target == TaskTarget::Class(1)).count();
        assert_eq!(swapped, 10);
    }

    #[test]
    fn span_answers_follow_the_question_word() {
        let (lang, vocab) = setup();
        let t = next_word_span(&lang, &vocab, 20, 5, 64, 6).unwrap();
        for e in t.train.iter().chain(&t.dev) {
            let p = e.second.as_ref().unwrap();
            let TaskTarget::Span { start, end } = e.target else { panic!() };
            assert!(start <= end && end < p.len());
            assert!(e.first.len() + p.len() + 3 <= 64);
            // The question tokens occur right before the answer.
            assert_eq!(&p[start - e.first.len()..start], e.first.as_slice());
        }
    }
}
