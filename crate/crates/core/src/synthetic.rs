//! Seeded synthetic corpora for offline runs and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Cohort, Document};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "ta", "vo", "sel", "din", "ar", "bu", "cor", "el", "fin", "gal", "hu", "ist",
    "jo", "mar", "nel", "os", "pra", "qui", "ros", "sun", "tor", "ul", "ven", "wes", "yal", "zen",
];

fn vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let parts = rng.gen_range(1..=3);
        let word: String = (0..parts).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        words.push(word);
    }
    words
}

/// Prose-like text of exactly `words` tokens.
pub fn text(rng: &mut ChaCha8Rng, vocab: &[String], words: usize) -> String {
    let mut out = String::new();
    let mut sentence_len = 0;
    for i in 0..words {
        let mut w = vocab.choose(rng).unwrap().clone();
        if sentence_len == 0 {
            let mut chars = w.chars();
            if let Some(first) = chars.next() {
                w = first.to_uppercase().chain(chars).collect();
            }
        }
        sentence_len += 1;
        if i + 1 == words || (sentence_len > 6 && rng.gen_bool(0.12)) {
            w.push('.');
            sentence_len = 0;
        } else if rng.gen_bool(0.05) {
            w.push(',');
        }
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&w);
    }
    out
}

/// `count` documents of `words` tokens each, ids `{cohort}-{index}`.
pub fn cohort(cohort: Cohort, count: usize, words: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (cohort as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let vocab = vocabulary(&mut rng, 2_000);
    (0..count)
        .map(|i| Document {
            id: format!("{cohort}-{i:04}"),
            cohort,
            source: "synthetic".into(),
            text: text(&mut rng, &vocab, words),
            published_at: None,
        })
        .collect()
}

/// Pre and post cohorts concatenated.
pub fn corpus(pre: usize, post: usize, words: usize, seed: u64) -> Vec<Document> {
    let mut docs = cohort(Cohort::Pre, pre, words, seed);
    docs.extend(cohort(Cohort::Post, post, words, seed));
    docs
}
