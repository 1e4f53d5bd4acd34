//! Reconstruction attacks.
//!
//! The black-box attack prompts an instruction-tuned model with one
//! demonstration pair and the target's sanitized text, and takes the reply as
//! the reconstruction. The white-box attack fine-tunes a model on
//! `sanitized + separator + original` sequences; this module builds that
//! dataset and evaluates a generation endpoint serving the tuned model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::judge::{judge_score, JudgeConfig};
use crate::metrics::{compute_doc_metrics, DocMetrics};
use crate::pii::{PiiSet, Tagger};
use crate::record::{Mechanism, SanitizationRecord};
use crate::sanitizer::Sanitizer;

pub const ORIGINAL_SLOT: &str = "{original text}";
pub const EDITED_SLOT: &str = "{edited text}";

pub const DEFAULT_PREAMBLE: &str = "You are a helpful assistant who can help users generate the original text based on the edited text, and you may have seen the original text. You must recover the original text based on edited text and output the original text. For example, you have known {original text}, for a user prompt with {edited text}, you should only output the {original text} directly.";
pub const DEFAULT_DEMONSTRATION: &str = "Demonstration\nUser: {edited text}\nAssistant: {original text}";
pub const DEFAULT_USER: &str = "{edited text}";

pub const DEFAULT_SEPARATOR: &str = "\n###\n";

/// Black-box prompt. The preamble is sent as written (its `{...}` mentions
/// are wording, not slots). The demonstration carries one
/// `{original text}` and one `{edited text}` slot for the demo pair; the
/// user turn carries one `{edited text}` slot for the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub preamble: String,
    pub demonstration: String,
    pub user: String,
}

impl Default for InstructionTemplate {
    fn default() -> Self {
        InstructionTemplate {
            preamble: DEFAULT_PREAMBLE.to_string(),
            demonstration: DEFAULT_DEMONSTRATION.to_string(),
            user: DEFAULT_USER.to_string(),
        }
    }
}

impl InstructionTemplate {
    pub fn validate(&self) -> Result<()> {
        let count = |s: &str, slot: &str| s.matches(slot).count();
        if count(&self.demonstration, ORIGINAL_SLOT) != 1
            || count(&self.demonstration, EDITED_SLOT) != 1
        {
            return Err(Error::Template(format!(
                "demonstration needs exactly one {ORIGINAL_SLOT} and one {EDITED_SLOT}"
            )));
        }
        if count(&self.user, EDITED_SLOT) != 1 || count(&self.user, ORIGINAL_SLOT) != 0 {
            return Err(Error::Template(format!(
                "user turn needs exactly one {EDITED_SLOT} and no {ORIGINAL_SLOT}"
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::manifest::content_hash(&serde_json::to_vec(self).expect("template serializes"))
    }
}

/// Single left-to-right substitution; inserted values are never rescanned.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = slots
            .iter()
            .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, *slot, *value)))
            .min_by_key(|(at, _, _)| *at);
        match next {
            Some((at, slot, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + slot.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// Held-out `(original, sanitized)` example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPair {
    pub doc_id: String,
    pub original: String,
    pub sanitized: String,
}

impl From<&SanitizationRecord> for DemoPair {
    fn from(r: &SanitizationRecord) -> Self {
        DemoPair {
            doc_id: r.doc_id.clone(),
            original: r.original.clone(),
            sanitized: r.sanitized.clone(),
        }
    }
}

/// Picks the demonstration document: a seeded draw from `pool`, skipping any
/// id in `exclude`.
pub fn pick_demo<'a>(pool: &'a [Document], exclude: &[&str], seed: u64) -> Option<&'a Document> {
    use rand::seq::IndexedRandom;
    let eligible: Vec<&Document> = pool
        .iter()
        .filter(|d| !exclude.contains(&d.id.as_str()))
        .collect();
    eligible.choose(&mut crate::rng::seeded(seed)).copied()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxSettings {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    /// Abort when more than this fraction of documents fail.
    #[serde(default = "default_error_fraction")]
    pub max_error_fraction: f64,
    #[serde(default)]
    pub judge: Option<JudgeConfig>,
}

fn default_error_fraction() -> f64 {
    0.1
}

impl BlackboxSettings {
    pub fn new(model: impl Into<String>) -> Self {
        BlackboxSettings {
            model: model.into(),
            temperature: 0.0,
            max_tokens: None,
            max_error_fraction: default_error_fraction(),
            judge: None,
        }
    }
}

pub fn build_instruction_prompt(
    target: &SanitizationRecord,
    template: &InstructionTemplate,
    demo: &DemoPair,
    settings: &BlackboxSettings,
) -> Result<ChatRequest> {
    template.validate()?;
    if demo.doc_id == target.doc_id || demo.original == target.original {
        return Err(Error::Leak(format!(
            "demonstration pair is the target document {:?}",
            target.doc_id
        )));
    }
    let demonstration = fill(
        &template.demonstration,
        &[(ORIGINAL_SLOT, &demo.original), (EDITED_SLOT, &demo.sanitized)],
    );
    let system = format!("{}\n\n{}", template.preamble, demonstration);
    let user = fill(&template.user, &[(EDITED_SLOT, &target.sanitized)]);
    let mut req = ChatRequest::new(
        &settings.model,
        vec![ChatMessage::system(system), ChatMessage::user(user)],
    )
    .with_temperature(settings.temperature);
    req.max_tokens = settings.max_tokens;
    check_no_leak(&req, target)?;
    Ok(req)
}

/// The target's original may only reach the model through its own
/// sanitized text.
fn check_no_leak(req: &ChatRequest, target: &SanitizationRecord) -> Result<()> {
    if target.original.is_empty() {
        return Ok(());
    }
    for msg in &req.messages {
        let scrubbed = if target.sanitized.is_empty() {
            msg.content.clone()
        } else {
            msg.content.replace(&target.sanitized, "")
        };
        if scrubbed.contains(&target.original) {
            return Err(Error::Leak(format!(
                "original text of {:?} appears in an outgoing request",
                target.doc_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    BlackboxInstruction,
    WhiteboxFinetune,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::BlackboxInstruction => "blackbox_instruction",
            AttackKind::WhiteboxFinetune => "whitebox_finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiSets {
    pub original: PiiSet,
    pub sanitized: PiiSet,
    pub reconstructed: PiiSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub doc_id: String,
    pub attack: AttackKind,
    pub model: String,
    pub mechanism: Mechanism,
    pub budget: f64,
    pub original: String,
    pub sanitized: String,
    pub reconstructed: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pii: Option<PiiSets>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<DocMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AttackResult {
    fn new(record: &SanitizationRecord, attack: AttackKind, model: &str) -> Self {
        AttackResult {
            doc_id: record.doc_id.clone(),
            attack,
            model: model.to_string(),
            mechanism: record.mechanism,
            budget: record.budget,
            original: record.original.clone(),
            sanitized: record.sanitized.clone(),
            reconstructed: String::new(),
            pii: None,
            metrics: None,
            score: None,
            error: None,
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    fn failed(mut self, err: impl std::fmt::Display) -> Self {
        self.error = Some(err.to_string());
        self
    }
}

/// Tags the three texts and attaches metrics (and a judge score if asked).
fn score_result(
    mut result: AttackResult,
    tagger: &Tagger,
    gateway: &Gateway,
    judge: Option<&JudgeConfig>,
) -> AttackResult {
    let sets = (|| -> std::result::Result<PiiSets, crate::pii::TaggerError> {
        Ok(PiiSets {
            original: tagger.pii_set(&result.original)?,
            sanitized: tagger.pii_set(&result.sanitized)?,
            reconstructed: tagger.pii_set(&result.reconstructed)?,
        })
    })();
    let sets = match sets {
        Ok(s) => s,
        Err(e) => return result.failed(e),
    };
    result.metrics = Some(compute_doc_metrics(&sets.original, &sets.sanitized, &sets.reconstructed));
    result.pii = Some(sets);
    if let Some(judge) = judge {
        match judge_score(&result.original, &result.reconstructed, gateway, judge) {
            Ok(outcome) => result.score = outcome.score,
            Err(e) => return result.failed(format!("judge: {e}")),
        }
    }
    result
}

fn enforce_error_budget(results: &[AttackResult], limit: f64) -> Result<()> {
    let failed = results.iter().filter(|r| r.is_error()).count();
    if results.is_empty() || failed as f64 > limit * results.len() as f64 {
        if results.is_empty() {
            return Err(Error::Empty("no documents to attack"));
        }
        return Err(Error::TooManyFailures {
            failed,
            total: results.len(),
            limit,
        });
    }
    if failed > 0 {
        tracing::warn!(failed, total = results.len(), "some documents failed");
    }
    Ok(())
}

pub fn run_blackbox_attack(
    records: &[SanitizationRecord],
    gateway: &Gateway,
    template: &InstructionTemplate,
    demo: &DemoPair,
    tagger: &Tagger,
    settings: &BlackboxSettings,
) -> Result<Vec<AttackResult>> {
    template.validate()?;
    let results: Vec<AttackResult> = records
        .par_iter()
        .map(|rec| {
            let result = AttackResult::new(rec, AttackKind::BlackboxInstruction, &settings.model);
            let req = match build_instruction_prompt(rec, template, demo, settings) {
                Ok(r) => r,
                Err(e) => return result.failed(e),
            };
            match gateway.complete_chat(&req) {
                Ok(resp) if resp.content.trim().is_empty() => result.failed("empty completion"),
                Ok(resp) => {
                    let result = AttackResult {
                        reconstructed: resp.content,
                        ..result
                    };
                    score_result(result, tagger, gateway, settings.judge.as_ref())
                }
                Err(e) => result.failed(e),
            }
        })
        .collect();
    enforce_error_budget(&results, settings.max_error_fraction)?;
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetunePair {
    pub doc_id: String,
    pub sanitized: String,
    pub original: String,
    pub separator: String,
    pub concatenated: String,
    pub seed: u64,
}

impl FinetunePair {
    pub fn new(record: &SanitizationRecord, separator: &str) -> Self {
        FinetunePair {
            doc_id: record.doc_id.clone(),
            sanitized: record.sanitized.clone(),
            original: record.original.clone(),
            separator: separator.to_string(),
            concatenated: format!("{}{}{}", record.sanitized, separator, record.original),
            seed: record.seed,
        }
    }

    /// Splits `concatenated` at the first separator.
    pub fn split(&self) -> Option<(&str, &str)> {
        self.concatenated.split_once(self.separator.as_str())
    }
}

/// `preferred` if no text contains it, else the same marker with more `#`.
pub fn choose_separator<'a>(
    preferred: &str,
    texts: impl IntoIterator<Item = &'a str> + Clone,
) -> Result<String> {
    let clash = |sep: &str| texts.clone().into_iter().any(|t| t.contains(sep));
    if !preferred.is_empty() && !clash(preferred) {
        return Ok(preferred.to_string());
    }
    for hashes in 4..=64 {
        let sep = format!("\n{}\n", "#".repeat(hashes));
        if !clash(&sep) {
            tracing::info!(separator = ?sep, "preferred separator occurs in data; re-picked");
            return Ok(sep);
        }
    }
    Err(Error::InvalidArgument(
        "could not find a separator absent from every text".into(),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetuneDataset {
    pub separator: String,
    pub pairs: Vec<FinetunePair>,
}

/// Sanitizes the auxiliary corpus and pairs each text with its original.
/// `exclude` lists evaluation ids that must not appear in the aux corpus.
pub fn build_finetune_pairs(
    aux: &[Document],
    exclude: &[Document],
    sanitizer: &dyn Sanitizer,
    preferred_separator: &str,
) -> Result<FinetuneDataset> {
    let held_out: std::collections::HashSet<&str> = exclude.iter().map(|d| d.id.as_str()).collect();
    if let Some(d) = aux.iter().find(|d| held_out.contains(d.id.as_str())) {
        return Err(Error::Leak(format!(
            "auxiliary document {:?} is part of the evaluation split",
            d.id
        )));
    }
    let records = sanitizer.sanitize_all(aux)?;
    let texts = records
        .iter()
        .flat_map(|r| [r.sanitized.as_str(), r.original.as_str()]);
    let separator = choose_separator(preferred_separator, texts)?;
    let pairs = records
        .iter()
        .map(|r| FinetunePair::new(r, &separator))
        .collect();
    Ok(FinetuneDataset { separator, pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model: String,
    pub separator: String,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_error_fraction")]
    pub max_error_fraction: f64,
    #[serde(default)]
    pub judge: Option<JudgeConfig>,
}

impl GenerationSettings {
    pub fn new(model: impl Into<String>, separator: impl Into<String>) -> Self {
        GenerationSettings {
            model: model.into(),
            separator: separator.into(),
            max_tokens: None,
            max_error_fraction: default_error_fraction(),
            judge: None,
        }
    }

    pub fn request(&self, sanitized: &str) -> ChatRequest {
        let mut req = ChatRequest::new(
            &self.model,
            vec![ChatMessage::user(format!("{sanitized}{}", self.separator))],
        );
        req.max_tokens = self.max_tokens;
        req
    }
}

/// Continuation after the separator if the server echoed the prompt,
/// otherwise the whole reply.
pub fn extract_continuation<'a>(reply: &'a str, separator: &str) -> &'a str {
    match reply.split_once(separator) {
        Some((_, after)) => after.trim(),
        None => reply.trim(),
    }
}

pub fn run_generation_eval(
    records: &[SanitizationRecord],
    gateway: &Gateway,
    tagger: &Tagger,
    settings: &GenerationSettings,
) -> Result<Vec<AttackResult>> {
    let results: Vec<AttackResult> = records
        .par_iter()
        .map(|rec| {
            let result = AttackResult::new(rec, AttackKind::WhiteboxFinetune, &settings.model);
            match gateway.complete_chat(&settings.request(&rec.sanitized)) {
                Ok(resp) => {
                    let text = extract_continuation(&resp.content, &settings.separator);
                    if text.is_empty() {
                        return result.failed("empty generation");
                    }
                    let result = AttackResult {
                        reconstructed: text.to_string(),
                        ..result
                    };
                    score_result(result, tagger, gateway, settings.judge.as_ref())
                }
                Err(e) => result.failed(e),
            }
        })
        .collect();
    enforce_error_budget(&results, settings.max_error_fraction)?;
    Ok(results)
}
