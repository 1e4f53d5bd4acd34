//! Deterministic synthetic data: embedding tables, planted documents and the
//! matching gazetteer. Used by the hermetic test suites and the CLI's
//! `--synthetic` inputs.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::Document;
use crate::embedding::EmbeddingTable;
use crate::error::Result;
use crate::pii::{Gazetteer, PiiClass};
use crate::rng::seeded;
use crate::scalar::Scalar;

const ONSETS: &[&str] = &[
    "b", "br", "c", "d", "dr", "f", "g", "gr", "h", "j", "k", "l", "m", "n", "p", "pr", "r", "s",
    "st", "t", "tr", "v", "w", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "m", "x"];

/// `n` distinct lowercase pseudo-words of two to four syllables.
pub fn pseudo_words(n: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded(seed);
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(&mut rng).unwrap());
            w.push_str(VOWELS.choose(&mut rng).unwrap());
        }
        w.push_str(CODAS.choose(&mut rng).unwrap());
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Gaussian directions with a log-uniform per-word scale in
/// `[min_scale, max_scale]`. Spread-out norms give a graded spectrum of
/// nearest-neighbour gaps, so retention under noise rises smoothly with the
/// privacy budget instead of jumping from 0 to 1.
pub fn synthetic_table<F: Scalar>(
    words: &[String],
    dim: usize,
    min_scale: f64,
    max_scale: f64,
    seed: u64,
) -> Result<EmbeddingTable<F>> {
    let mut rng = seeded(seed);
    let (lo, hi) = (min_scale.ln(), max_scale.ln());
    let rows: Vec<(String, Vec<F>)> = words
        .iter()
        .map(|w| {
            let scale = rng.random_range(lo..=hi).exp();
            let v = (0..dim)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    F::of(g * scale)
                })
                .collect();
            (w.clone(), v)
        })
        .collect();
    EmbeddingTable::from_rows(rows, dim)
}

/// `n` sentences of `len` words drawn uniformly from `words`.
pub fn synthetic_sentences(words: &[String], n: usize, len: usize, seed: u64) -> Vec<Document> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let text = (0..len)
                .map(|_| words.choose(&mut rng).unwrap().as_str())
                .collect::<Vec<_>>()
                .join(" ");
            Document::new(format!("s{i:05}"), text)
        })
        .collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub docs: Vec<Document>,
    pub gazetteer: Gazetteer,
}

/// Documents built from `words`, each carrying `entities_per_doc`
/// capitalized person (two-word) and place (one-word) names, with filler
/// words in between. Every entity is listed in the returned gazetteer.
/// Names and fillers are drawn from disjoint halves of the vocabulary.
pub fn planted_corpus(words: &[String], n_docs: usize, entities_per_doc: usize, seed: u64) -> PlantedCorpus {
    assert!(words.len() >= 8, "need a few words to plant documents");
    let mut rng = seeded(seed);
    let mut pool: Vec<&String> = words.iter().collect();
    pool.shuffle(&mut rng);
    let (names, fillers) = pool.split_at(pool.len() / 2);

    let mut gazetteer = Gazetteer::new();
    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let mut parts: Vec<String> = Vec::new();
        for e in 0..entities_per_doc {
            for _ in 0..rng.random_range(2..=4) {
                parts.push(fillers.choose(&mut rng).unwrap().to_string());
            }
            let (class, n_words) = if e % 2 == 0 { (PiiClass::Person, 2) } else { (PiiClass::Gpe, 1) };
            let entity = (0..n_words)
                .map(|_| capitalize(names.choose(&mut rng).unwrap()))
                .collect::<Vec<_>>()
                .join(" ");
            gazetteer.entry(class).or_default().push(entity.clone());
            parts.push(entity);
        }
        let mut text = parts.join(" ");
        text.push('.');
        docs.push(Document::new(format!("p{i:04}"), text));
    }
    for list in gazetteer.values_mut() {
        list.sort();
        list.dedup();
    }
    PlantedCorpus { docs, gazetteer }
}
