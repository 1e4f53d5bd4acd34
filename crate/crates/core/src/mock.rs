//! In-process stand-ins for chat endpoints and logit providers, used by the
//! hermetic test suite and by `mock-*` endpoints in run configs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::corpus::Document;
use crate::gateway::{ChatRequest, Completion, Transport, TransportError};
use crate::sentence_dp::{LogitProvider, ProviderError};
use crate::word_dp::tokenize;

/// Replies with the last user message verbatim.
#[derive(Default)]
pub struct EchoModel {
    calls: AtomicUsize,
}

impl EchoModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for EchoModel {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Completion::text(request.last_user().unwrap_or_default()))
    }
}

/// Returns `replies[sample]`, repeating the last entry for higher draws.
pub struct FixedReplyModel {
    replies: Vec<String>,
    calls: AtomicUsize,
}

impl FixedReplyModel {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        assert!(!replies.is_empty(), "FixedReplyModel needs at least one reply");
        FixedReplyModel {
            replies,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for FixedReplyModel {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let i = (request.sample as usize).min(self.replies.len() - 1);
        Ok(Completion::text(self.replies[i].clone()))
    }
}

/// A model that has memorized a planted corpus. It answers with the planted
/// original most similar to the query (Jaccard over lowercase word sets) when
/// the similarity reaches `min_similarity`, and echoes the query otherwise.
///
/// The query is the last user message, with any trailing `strip_suffix`
/// removed so that whitebox-style `sanitized + separator` prompts work too.
pub struct MemorizingModel {
    docs: Vec<String>,
    bags: Vec<Vec<String>>,
    min_similarity: f64,
    strip_suffix: Option<String>,
    calls: AtomicUsize,
}

fn word_bag(text: &str) -> Vec<String> {
    let mut words: Vec<String> = tokenize(text).words().map(|t| t.lower.clone()).collect();
    words.sort();
    words.dedup();
    words
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

impl MemorizingModel {
    pub fn new(planted: &[Document], min_similarity: f64) -> Self {
        let docs: Vec<String> = planted.iter().map(|d| d.text.clone()).collect();
        let bags = docs.iter().map(|d| word_bag(d)).collect();
        MemorizingModel {
            docs,
            bags,
            min_similarity,
            strip_suffix: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn strip_suffix(mut self, suffix: impl Into<String>) -> Self {
        self.strip_suffix = Some(suffix.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Best planted document for `query`, with its similarity. Ties go to the
    /// earlier document.
    pub fn recall(&self, query: &str) -> Option<(usize, f64)> {
        let bag = word_bag(query);
        let mut best: Option<(usize, f64)> = None;
        for (i, doc) in self.bags.iter().enumerate() {
            let s = jaccard(&bag, doc);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }
}

impl Transport for MemorizingModel {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut query = request.last_user().unwrap_or_default();
        if let Some(sfx) = &self.strip_suffix {
            query = query.strip_suffix(sfx.as_str()).unwrap_or(query);
        }
        let reply = match self.recall(query) {
            Some((i, s)) if s >= self.min_similarity => self.docs[i].clone(),
            _ => query.to_string(),
        };
        Ok(Completion::text(reply))
    }
}

/// Same logits at every step.
pub struct FixedLogits {
    logits: Vec<f64>,
    vocab: Vec<String>,
    eos: Option<u32>,
}

impl FixedLogits {
    pub fn new<S: Into<String>>(logits: Vec<f64>, vocab: Vec<S>, eos: Option<u32>) -> Self {
        let vocab: Vec<String> = vocab.into_iter().map(Into::into).collect();
        assert_eq!(logits.len(), vocab.len());
        FixedLogits { logits, vocab, eos }
    }
}

impl LogitProvider<f64> for FixedLogits {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, _text: &str) -> Result<Vec<u32>, ProviderError> {
        Ok(Vec::new())
    }

    fn next_logits(&self, _prefix: &[u32]) -> Result<Vec<f64>, ProviderError> {
        Ok(self.logits.clone())
    }

    fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.vocab[i as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn eos(&self) -> Option<u32> {
        self.eos
    }
}

/// Toy paraphraser over a word vocabulary: it puts `strength` on the next
/// known word of the prompt (template words included) and 0 on everything
/// else, then ends with EOS.
/// With clipping the copy preference shrinks to `C` and temperature decides
/// how often it strays.
pub struct CopyLm {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    strength: f64,
}

impl CopyLm {
    const SEP: u32 = 0;
    const EOS: u32 = 1;

    pub fn new<I, S>(words: I, strength: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = vec!["<sep>".to_string(), "<eos>".to_string()];
        let mut index = HashMap::new();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !index.contains_key(&w) {
                index.insert(w.clone(), vocab.len() as u32);
                vocab.push(w);
            }
        }
        CopyLm {
            vocab,
            index,
            strength,
        }
    }
}

impl LogitProvider<f64> for CopyLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Known words of the prompt, then a separator marking where output begins.
    fn encode(&self, text: &str) -> Result<Vec<u32>, ProviderError> {
        let mut ids: Vec<u32> = tokenize(text)
            .words()
            .filter_map(|t| self.index.get(&t.lower).copied())
            .collect();
        ids.push(Self::SEP);
        Ok(ids)
    }

    fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f64>, ProviderError> {
        let sep = prefix
            .iter()
            .rposition(|&t| t == Self::SEP)
            .ok_or_else(|| ProviderError("prefix lacks separator".into()))?;
        let source = &prefix[..sep];
        let emitted = prefix.len() - sep - 1;
        let target = source.get(emitted).copied().unwrap_or(Self::EOS);
        let mut logits = vec![0.0; self.vocab.len()];
        logits[target as usize] = self.strength;
        Ok(logits)
    }

    fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i > Self::EOS)
            .map(|&i| self.vocab[i as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn eos(&self) -> Option<u32> {
        Some(Self::EOS)
    }
}
