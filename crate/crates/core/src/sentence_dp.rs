//! Sentence-level DP by paraphrasing.
//!
//! The exact backend samples each token from a temperature softmax over
//! norm-clipped logits, which is an instance of the exponential mechanism;
//! `m` sampled tokens with clip bound `C` at temperature `T` cost `2mC/T`.
//! The api backend sends a paraphrase instruction to a chat endpoint at
//! temperature `T` and cannot clip.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::manifest::content_hash;
use crate::record::{now_rfc3339, DecodeStats, Mechanism, SanitizationRecord};
use crate::rng::doc_rng;
use crate::scalar::{l2_norm, Scalar};

pub const DEFAULT_PARAPHRASE_TEMPLATE: &str = "Paraphrase the following text: {text}";
pub const TEXT_SLOT: &str = "{text}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDpConfig {
    pub temperature: f64,
    pub clip_bound: f64,
    pub max_tokens: usize,
    #[serde(default = "default_template")]
    pub paraphrase_template: String,
    #[serde(default)]
    pub seed: u64,
    /// attempts per provider call before giving up
    #[serde(default = "default_provider_attempts")]
    pub provider_attempts: u32,
}

fn default_template() -> String {
    DEFAULT_PARAPHRASE_TEMPLATE.to_string()
}

fn default_provider_attempts() -> u32 {
    3
}

impl SentenceDpConfig {
    pub fn new(temperature: f64, clip_bound: f64, max_tokens: usize) -> Self {
        SentenceDpConfig {
            temperature,
            clip_bound,
            max_tokens,
            paraphrase_template: default_template(),
            seed: 0,
            provider_attempts: default_provider_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("temperature", self.temperature)?;
        positive("clip bound", self.clip_bound)?;
        if self.max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be >= 1".into()));
        }
        check_template(&self.paraphrase_template)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn check_template(template: &str) -> Result<()> {
    match template.matches(TEXT_SLOT).count() {
        1 => Ok(()),
        n => Err(Error::Template(format!(
            "paraphrase template needs exactly one {TEXT_SLOT} slot, found {n}"
        ))),
    }
}

pub fn gen_prompt(template: &str, text: &str) -> Result<String> {
    check_template(template)?;
    Ok(template.replacen(TEXT_SLOT, text, 1))
}

/// `u * min(1, C / |u|)`.
pub fn clip_logits<F: Scalar>(logits: &[F], clip_bound: F) -> Result<Vec<F>> {
    if clip_bound.is_nan() || clip_bound <= F::zero() {
        return Err(Error::InvalidArgument(format!(
            "clip bound must be positive, got {clip_bound}"
        )));
    }
    let norm = l2_norm(logits);
    if norm <= clip_bound {
        return Ok(logits.to_vec());
    }
    Ok(logits.iter().map(|&u| u * clip_bound / norm).collect())
}

/// Softmax of `logits / T`, max-subtracted.
pub fn temperature_distribution<F: Scalar>(logits: &[F], temperature: F) -> Result<Vec<F>> {
    if temperature.is_nan() || temperature <= F::zero() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::Empty("logit vector"));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let weights: Vec<F> = logits.iter().map(|&u| ((u - max) / temperature).exp()).collect();
    let total: F = weights.iter().copied().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<F: Scalar, R: Rng + ?Sized>(probs: &[F], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// One exponential-mechanism step: clip, soften, sample.
pub fn sample_next_token<F: Scalar, R: Rng + ?Sized>(
    logits: &[F],
    clip_bound: F,
    temperature: F,
    rng: &mut R,
) -> Result<usize> {
    let clipped = clip_logits(logits, clip_bound)?;
    let probs = temperature_distribution(&clipped, temperature)?;
    Ok(sample_index(&probs, rng))
}

/// `2 m C / T`: the LDP cost of `m` sampled tokens.
///
/// The bound is sometimes quoted as "2mCε/T-LDP"; the ε there is the very
/// quantity being bounded, so it is left out here.
pub fn ldp_budget(tokens: usize, clip_bound: f64, temperature: f64) -> Result<f64> {
    positive("clip bound", clip_bound)?;
    positive("temperature", temperature)?;
    Ok(2.0 * tokens as f64 * clip_bound / temperature)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// A language model exposing its full next-token logit vector.
pub trait LogitProvider<F: Scalar>: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn encode(&self, text: &str) -> std::result::Result<Vec<u32>, ProviderError>;

    /// Logits for the token following `prefix`; one entry per vocabulary id.
    fn next_logits(&self, prefix: &[u32]) -> std::result::Result<Vec<F>, ProviderError>;

    fn decode(&self, ids: &[u32]) -> String;

    fn eos(&self) -> Option<u32> {
        None
    }

    /// False for providers that only expose the top-k logits. Clipping needs
    /// the norm of the full vector, so those are refused.
    fn full_vocabulary(&self) -> bool {
        true
    }
}

fn with_retries<T>(
    attempts: u32,
    mut call: impl FnMut() -> std::result::Result<T, ProviderError>,
) -> Result<T> {
    let attempts = attempts.max(1);
    let mut last = String::new();
    for _ in 0..attempts {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) => last = e.0,
        }
    }
    Err(Error::Provider {
        attempts,
        message: last,
    })
}

pub fn dp_decode<F: Scalar, P: LogitProvider<F> + ?Sized>(
    doc_id: &str,
    text: &str,
    provider: &P,
    config: &SentenceDpConfig,
) -> Result<SanitizationRecord> {
    let mut rng = doc_rng(config.seed, doc_id);
    dp_decode_with_rng(doc_id, text, provider, config, &mut rng)
}

pub fn dp_decode_with_rng<F: Scalar, P: LogitProvider<F> + ?Sized, R: Rng + ?Sized>(
    doc_id: &str,
    text: &str,
    provider: &P,
    config: &SentenceDpConfig,
    rng: &mut R,
) -> Result<SanitizationRecord> {
    config.validate()?;
    if !provider.full_vocabulary() {
        return Err(Error::Vocabulary(
            "provider exposes only partial logits; exact decoding needs the full vector".into(),
        ));
    }
    let vocab = provider.vocab_size();
    let prompt = gen_prompt(&config.paraphrase_template, text)?;
    let mut prefix = with_retries(config.provider_attempts, || provider.encode(&prompt))?;
    let clip = F::of(config.clip_bound);
    let temperature = F::of(config.temperature);
    let mut output = Vec::new();
    let mut sampled = 0;
    for _ in 0..config.max_tokens {
        let logits = with_retries(config.provider_attempts, || provider.next_logits(&prefix))?;
        if logits.len() != vocab {
            return Err(Error::Vocabulary(format!(
                "provider returned {} logits for a vocabulary of {vocab}",
                logits.len()
            )));
        }
        let token = sample_next_token(&logits, clip, temperature, rng)? as u32;
        sampled += 1;
        if provider.eos() == Some(token) {
            break;
        }
        output.push(token);
        prefix.push(token);
    }
    Ok(SanitizationRecord {
        doc_id: doc_id.to_string(),
        original: text.to_string(),
        sanitized: provider.decode(&output),
        mechanism: Mechanism::SentenceLevelExact,
        budget: config.temperature,
        seed: config.seed,
        timestamp: now_rfc3339(),
        word_stats: None,
        decode_stats: Some(DecodeStats {
            clip_bound: config.clip_bound,
            max_tokens: config.max_tokens,
            tokens_sampled: sampled,
            ldp_epsilon: ldp_budget(sampled, config.clip_bound, config.temperature)?,
        }),
        template_hash: Some(content_hash(config.paraphrase_template.as_bytes())),
        model: None,
    })
}

/// Extra draws requested when the endpoint returns an empty paraphrase.
pub const EMPTY_COMPLETION_RETRIES: u32 = 2;

pub fn api_paraphrase(
    doc_id: &str,
    text: &str,
    gateway: &Gateway,
    model: &str,
    temperature: f64,
    template: &str,
) -> Result<SanitizationRecord> {
    positive("temperature", temperature)?;
    let prompt = gen_prompt(template, text)?;
    let base = ChatRequest::new(model, vec![ChatMessage::user(prompt)]).with_temperature(temperature);
    let mut paraphrase = None;
    for sample in 0..=EMPTY_COMPLETION_RETRIES {
        let resp = gateway.complete_chat(&base.clone().with_sample(sample))?;
        if !resp.content.trim().is_empty() {
            paraphrase = Some(resp.content);
            break;
        }
    }
    let sanitized = paraphrase.ok_or_else(|| Error::Provider {
        attempts: EMPTY_COMPLETION_RETRIES + 1,
        message: format!("{model} returned empty paraphrases"),
    })?;
    Ok(SanitizationRecord {
        doc_id: doc_id.to_string(),
        original: text.to_string(),
        sanitized,
        mechanism: Mechanism::SentenceLevelApi,
        budget: temperature,
        seed: 0,
        timestamp: now_rfc3339(),
        word_stats: None,
        decode_stats: None,
        template_hash: Some(content_hash(template.as_bytes())),
        model: Some(model.to_string()),
    })
}

/// Logit server over HTTP:
///
/// * `POST {base}/tokenize` with `{"text": ...}` -> `{"tokens": [ids]}`
/// * `POST {base}/logits` with `{"tokens": [ids]}` -> `[f, f, ...]` (vocab_size floats)
///
/// The vocabulary (id -> piece) is supplied by the caller.
pub struct HttpLogitProvider {
    agent: ureq::Agent,
    base: String,
    vocab: Vec<String>,
    eos: Option<u32>,
}

impl HttpLogitProvider {
    pub fn new(base_url: &str, vocab: Vec<String>, eos: Option<u32>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpLogitProvider {
            agent,
            base: base_url.trim_end_matches('/').to_string(),
            vocab,
            eos,
        }
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: serde_json::Value,
    ) -> std::result::Result<T, ProviderError> {
        let url = format!("{}/{path}", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| ProviderError(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError(format!("{url}: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError(format!("{url}: status {status}")));
        }
        serde_json::from_str(&text).map_err(|e| ProviderError(format!("{url}: {e}")))
    }
}

#[derive(Deserialize)]
struct TokenizeResponse {
    tokens: Vec<u32>,
}

impl<F: Scalar> LogitProvider<F> for HttpLogitProvider {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, text: &str) -> std::result::Result<Vec<u32>, ProviderError> {
        self.post::<TokenizeResponse>("tokenize", serde_json::json!({ "text": text }))
            .map(|r| r.tokens)
    }

    fn next_logits(&self, prefix: &[u32]) -> std::result::Result<Vec<F>, ProviderError> {
        let raw: Vec<f64> = self.post("logits", serde_json::json!({ "tokens": prefix }))?;
        Ok(raw.into_iter().map(F::of).collect())
    }

    fn decode(&self, ids: &[u32]) -> String {
        let joined: String = ids
            .iter()
            .filter_map(|&i| self.vocab.get(i as usize))
            .map(|piece| piece.replace(['\u{2581}', '\u{0120}'], " "))
            .collect();
        joined.trim().to_string()
    }

    fn eos(&self) -> Option<u32> {
        self.eos
    }
}
