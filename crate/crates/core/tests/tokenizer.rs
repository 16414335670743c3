use rand::Rng as _;
use sbl::rng::from_seed;
use sbl::tokenizer::{build_vocab, detokenize, segment_word, tokenize, Vocab, UNK};

fn random_words(n: usize, alphabet: &[u8], len: (usize, usize), seed: u64) -> Vec<String> {
    let mut rng = from_seed(seed);
    (0..n)
        .map(|_| {
            let l = rng.gen_range(len.0..=len.1);
            (0..l).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect()
        })
        .collect()
}

#[test]
fn thousand_covered_words_round_trip() {
    let words = random_words(1000, b"abcdefghijklmnopqrstuvwxyz0123456789", (1, 14), 1);
    let text = words.join(" ");
    // Small target: most words are split into several pieces.
    let vocab = build_vocab([text.as_str()], 300).unwrap();
    let ids = tokenize(&text, &vocab);
    assert!(!ids.contains(&UNK));
    assert!(ids.len() > words.len());
    assert_eq!(detokenize(&ids, &vocab).unwrap(), text);
}

/// Every segmentation of `word` into vocabulary pieces, as piece strings.
fn all_segmentations(word: &str, vocab: &Vocab) -> Vec<Vec<String>> {
    fn go(chars: &[char], start: usize, vocab: &Vocab, cur: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if start == chars.len() {
            out.push(cur.clone());
            return;
        }
        for end in start + 1..=chars.len() {
            let body: String = chars[start..end].iter().collect();
            let piece = if start == 0 { body } else { format!("##{body}") };
            if vocab.contains(&piece) {
                cur.push(piece);
                go(chars, end, vocab, cur, out);
                cur.pop();
            }
        }
    }
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    go(&chars, 0, vocab, &mut Vec::new(), &mut out);
    out
}

#[test]
fn greedy_matches_brute_force_longest_first() {
    let corpus = random_words(400, b"abcdef", (2, 9), 2).join(" ");
    let vocab = build_vocab([corpus.as_str()], 120).unwrap();
    for word in random_words(100, b"abcdef", (1, 10), 3) {
        let segs = all_segmentations(&word, &vocab);
        assert!(!segs.is_empty(), "{word} not covered");
        // With every character covered, greedy never dead-ends, so it must
        // pick the segmentation whose piece lengths are lexicographically
        // largest.
        let lengths = |s: &Vec<String>| s.iter().map(|p| p.trim_start_matches("##").chars().count()).collect::<Vec<_>>();
        let best = segs.iter().max_by_key(|s| lengths(s)).unwrap();
        let expected: Vec<u32> = best.iter().map(|p| vocab.id(p).unwrap()).collect();
        assert_eq!(segment_word(&word, &vocab).unwrap(), expected, "{word}");
    }
}
