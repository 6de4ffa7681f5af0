//! Synthetic corpora for smoke tests and demos.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AccidentRecord, GeneralCause};

const FILLER: &[&str] = &[
    "the", "train", "crew", "was", "at", "on", "track", "near", "yard", "car", "cars", "engine", "while",
    "moving", "east", "west", "main", "line", "switch", "after", "before", "reported", "conductor",
    "engineer", "speed", "mph", "approximately", "derailed", "struck", "stopped", "during", "shift",
    "siding", "mile", "post", "locomotive", "freight", "consist", "an", "and", "of", "to", "with",
];

/// Keyword stem for class `c`, keyword `j`.
pub fn class_keyword(c: usize, j: usize) -> String {
    format!("{}{}", ["volt", "fatigue", "debris", "aspect", "gauge", "brake", "radio", "rail"][c % 8], j)
        + &"x".repeat(c / 8)
}

/// Narratives of filler words with 2 to 4 class-exclusive keywords mixed
/// in. Labels cycle so classes are balanced.
pub fn keyword_corpus(n_docs: usize, n_classes: usize, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let label = i % n_classes;
            let len = rng.random_range(12..30);
            let mut words: Vec<String> = (0..len).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
            for _ in 0..rng.random_range(2..5) {
                let pos = rng.random_range(0..=words.len());
                words.insert(pos, class_keyword(label, rng.random_range(0..4)));
            }
            (words.join(" "), label)
        })
        .collect()
}

/// [`keyword_corpus`] as accident records with general-cause codes
/// (class `c` is `GeneralCause::ALL[c]`).
pub fn keyword_records(n_docs: usize, seed: u64) -> Vec<AccidentRecord> {
    keyword_corpus(n_docs, GeneralCause::ALL.len(), seed)
        .into_iter()
        .enumerate()
        .map(|(i, (narrative, label))| AccidentRecord {
            id: format!("syn{i:05}"),
            year: 2001 + (i % 17) as i32,
            narrative,
            cause_code: format!("{}{:03}", GeneralCause::ALL[label].letter(), 100 + i % 7),
        })
        .collect()
}

/// Sentences in which `alpha` and `beta` occur in the same contexts while
/// every `tokN` has contexts of its own.
pub fn substitutable_corpus(n_sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = ["signal", "lamp", "relay", "circuit", "wire", "cable"];
    (0..n_sentences)
        .map(|_| {
            let mut sentence = Vec::new();
            if rng.random_bool(0.5) {
                let subject = if rng.random_bool(0.5) { "alpha" } else { "beta" };
                for _ in 0..6 {
                    if rng.random_bool(0.5) {
                        sentence.push(subject.to_string());
                    }
                    sentence.push(shared.choose(&mut rng).unwrap().to_string());
                }
            } else {
                let group = rng.random_range(0..10);
                for _ in 0..8 {
                    let token = if rng.random_bool(0.5) { group } else { rng.random_range(0..10) * 10 + group };
                    sentence.push(format!("tok{token}"));
                }
            }
            sentence
        })
        .collect()
}
