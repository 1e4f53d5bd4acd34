//! Word-level metric-DP sanitization: perturb each word's embedding with
//! multivariate Laplace noise and emit the vocabulary word nearest to the
//! noisy point.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::{EmbeddingTable, SearchMode};
use crate::error::{Error, Result};
use crate::record::{now_rfc3339, Mechanism, SanitizationRecord, WordStats};
use crate::rng::doc_rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordDpConfig {
    pub epsilon: f64,
    pub dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub search: SearchMode,
}

impl WordDpConfig {
    pub fn new(epsilon: f64, dim: usize, seed: u64) -> Self {
        WordDpConfig {
            epsilon,
            dim,
            seed,
            search: SearchMode::Accelerated,
        }
    }

    fn validate<F: Scalar>(&self, table: &EmbeddingTable<F>) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.dim != table.dim() {
            return Err(Error::DimensionMismatch {
                expected: table.dim(),
                actual: self.dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// surface form as it appeared in the input
    pub text: String,
    /// lowercased form used for embedding lookup
    pub lower: String,
    pub is_word: bool,
    pub oov: bool,
    /// whitespace preceded this token in the input
    pub space_before: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<Token>,
}

impl TokenizedText {
    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.is_word)
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }

    pub fn is_word(&self) -> Vec<bool> {
        self.tokens.iter().map(|t| t.is_word).collect()
    }

    pub fn mark_oov<F: Scalar>(&mut self, table: &EmbeddingTable<F>) {
        for t in &mut self.tokens {
            t.oov = t.is_word && table.position(&t.lower).is_none();
        }
    }

    pub fn oov_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.oov).count()
    }

    pub fn detokenize(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            if t.space_before {
                out.push(' ');
            }
            out.push_str(&t.text);
        }
        out
    }
}

fn token(text: &str, is_word: bool, space_before: bool) -> Token {
    Token {
        text: text.to_string(),
        lower: text.to_lowercase(),
        is_word,
        oov: false,
        space_before,
    }
}

/// Whitespace split, then leading and trailing punctuation runs peeled off as
/// separator tokens. Inner punctuation (`i'm`, `u.s`) stays in the word.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    for (i, chunk) in text.split_whitespace().enumerate() {
        let mut space = i > 0;
        let Some(first) = chunk.find(|c: char| c.is_alphanumeric()) else {
            tokens.push(token(chunk, false, space));
            continue;
        };
        let last = chunk
            .char_indices()
            .rfind(|(_, c)| c.is_alphanumeric())
            .map_or(chunk.len(), |(j, c)| j + c.len_utf8());
        if first > 0 {
            tokens.push(token(&chunk[..first], false, space));
            space = false;
        }
        tokens.push(token(&chunk[first..last], true, space));
        if last < chunk.len() {
            tokens.push(token(&chunk[last..], false, false));
        }
    }
    TokenizedText { tokens }
}

/// Draws `z` with density proportional to `exp(-epsilon * |z|)` in `dim`
/// dimensions: a Gamma(dim, 1/epsilon) radius times a uniform direction.
pub fn sample_laplace_noise<F: Scalar, R: Rng + ?Sized>(
    epsilon: f64,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("noise dimension must be >= 1".into()));
    }
    let radius_law = Gamma::new(dim as f64, 1.0 / epsilon)
        .map_err(|e| Error::InvalidArgument(format!("gamma parameters: {e}")))?;
    let radius = radius_law.sample(rng);
    let direction = loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
        }
    };
    Ok(direction.into_iter().map(|u| F::of(radius * u)).collect())
}

/// Noisy projection of a single vocabulary row. Returns the replacement row.
pub fn perturb_row<F: Scalar, R: Rng + ?Sized>(
    table: &EmbeddingTable<F>,
    row: usize,
    epsilon: f64,
    mode: SearchMode,
    rng: &mut R,
) -> Result<usize> {
    let noise: Vec<F> = sample_laplace_noise(epsilon, table.dim(), rng)?;
    let noisy: Vec<F> = table
        .vector(row)
        .iter()
        .zip(&noise)
        .map(|(&x, &z)| x + z)
        .collect();
    table.nearest_row(&noisy, mode)
}

pub fn sanitize_word_level<F: Scalar>(
    doc_id: &str,
    text: &str,
    table: &EmbeddingTable<F>,
    config: &WordDpConfig,
) -> Result<SanitizationRecord> {
    config.validate(table)?;
    let mut rng = doc_rng(config.seed, doc_id);
    let mut tokens = tokenize(text);
    tokens.mark_oov(table);
    let mut stats = WordStats::default();
    for tok in tokens.tokens.iter_mut().filter(|t| t.is_word) {
        stats.words += 1;
        if tok.oov {
            stats.oov += 1;
            continue;
        }
        let row = table.position(&tok.lower).expect("in-vocabulary token");
        let out = perturb_row(table, row, config.epsilon, config.search, &mut rng)?;
        if out != row {
            stats.replaced += 1;
        }
        tok.text = table.word(out).to_string();
        tok.lower = tok.text.clone();
    }
    Ok(SanitizationRecord {
        doc_id: doc_id.to_string(),
        original: text.to_string(),
        sanitized: tokens.detokenize(),
        mechanism: Mechanism::WordLevel,
        budget: config.epsilon,
        seed: config.seed,
        timestamp: now_rfc3339(),
        word_stats: Some(stats),
        decode_stats: None,
        template_hash: None,
        model: None,
    })
}

/// Sanitizes documents in parallel; output order follows input order.
pub fn sanitize_corpus_word_level<F: Scalar>(
    docs: &[Document],
    table: &EmbeddingTable<F>,
    config: &WordDpConfig,
) -> Result<Vec<SanitizationRecord>> {
    docs.par_iter()
        .map(|d| sanitize_word_level(&d.id, &d.text, table, config))
        .collect()
}
