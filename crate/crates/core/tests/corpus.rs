use sbl::corpus::{sample_pair, SentenceLabel, SyntheticLanguage, SyntheticSpec, TokenizedStore, TransitionRule};
use sbl::experiment::corpus_rng;
use sbl::rng::{from_seed, stream};

use rand::seq::SliceRandom;

fn bigram_counts(lang: &SyntheticLanguage, documents: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = lang.words().len();
    let mut counts = vec![vec![0usize; n]; n];
    let mut rng = corpus_rng(seed);
    for _ in 0..documents {
        let (_, sents) = lang.generate_indices(&mut rng);
        for w in sents.concat().windows(2) {
            counts[w[0]][w[1]] += 1;
        }
    }
    counts
}

#[test]
fn default_corpus_bigrams_match_transition_rows() {
    let spec = SyntheticSpec::default();
    let lang = SyntheticLanguage::new(&spec).unwrap();
    let counts = bigram_counts(&lang, 500, spec.language_seed);
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        assert!(total > 0, "word {i} never visited");
        let tv: f64 = row
            .iter()
            .zip(&lang.transition()[i])
            .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "row {i}: total variation {tv:.4} over {total} bigrams");
    }
}

#[test]
fn uniform_chain_cannot_tell_shuffled_from_original() {
    let spec = SyntheticSpec { rule: TransitionRule::Uniform, ..Default::default() };
    let uniform = SyntheticLanguage::new(&spec).unwrap();
    let banded = SyntheticLanguage::new(&SyntheticSpec::default()).unwrap();
    let mut rng = from_seed(3);
    let (mut uniform_gap, mut banded_gap) = (0.0, 0.0);
    for _ in 0..50 {
        for lang in [&uniform, &banded] {
            let (_, sents) = lang.generate_indices(&mut rng);
            let original = sents.concat();
            let mut shuffled = original.clone();
            shuffled.shuffle(&mut rng);
            let gap = lang.log_likelihood(&original) - lang.log_likelihood(&shuffled);
            if std::ptr::eq(lang, &uniform) {
                uniform_gap += gap.abs();
            } else {
                banded_gap += gap;
            }
        }
    }
    // Every sequence of a given length is equally likely under the uniform
    // chain; the banded chain strongly prefers the original order.
    assert!(uniform_gap < 1e-6, "{uniform_gap}");
    assert!(banded_gap.is_infinite() || banded_gap > 1000.0, "{banded_gap}");
}

fn toy_store() -> TokenizedStore {
    let docs = (0..40u32)
        .map(|d| (0..3 + d % 5).map(|s| (0..4 + (d + s) % 6).map(|t| 5 + (d * 7 + s * 3 + t) % 50).collect()).collect())
        .collect();
    TokenizedStore::from_documents(docs)
}

#[test]
fn pair_labels_are_uniform_by_chi_square() {
    let store = toy_store();
    let n = 30_000;
    let mut counts = [0usize; 3];
    for i in 0..n {
        let p = sample_pair(&store, 24, &mut stream(11, i)).unwrap();
        counts[p.label.index()] += 1;
        match p.label {
            SentenceLabel::Rand => assert_ne!(p.documents.0, p.documents.1),
            _ => assert_eq!(p.documents.0, p.documents.1),
        }
    }
    let expected = n as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 1% point of chi-square with 2 degrees of freedom.
    assert!(chi2 < 9.2103, "counts {counts:?}, chi2 {chi2}");
    for c in counts {
        assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() <= 0.02);
    }
}
