//! LLM-as-judge similarity score between an original and a reconstruction.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatRequest, Gateway};

/// System prompt, sent as-is. The `{text1}`/`{text2}`/`{score}` placeholders
/// inside its example block are left unfilled.
pub const DEFAULT_JUDGE_SYSTEM: &str = "Assume you are a helpful assistant. Your task is to analyze the match rate of the key information (e.g., time, place, person) in two documents. Based on your assessment, assign the response a numerical score ranging from 0 (low similarity) to 10 (high similarity). \n[Example]\nUser: Text1: {text1} Text2: {text2}\nAssistant: {score}";

pub const DEFAULT_JUDGE_USER: &str = "Text1: {text1} Text2: {text2}";

pub const MAX_SCORE: u8 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub model: String,
    #[serde(default = "default_system")]
    pub system_template: String,
    #[serde(default = "default_user")]
    pub user_template: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_system() -> String {
    DEFAULT_JUDGE_SYSTEM.to_string()
}

fn default_user() -> String {
    DEFAULT_JUDGE_USER.to_string()
}

fn default_retries() -> u32 {
    2
}

impl JudgeConfig {
    pub fn new(model: impl Into<String>) -> Self {
        JudgeConfig {
            model: model.into(),
            system_template: default_system(),
            user_template: default_user(),
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for slot in ["{text1}", "{text2}"] {
            if self.user_template.matches(slot).count() != 1 {
                return Err(Error::Template(format!(
                    "judge user template needs exactly one {slot}"
                )));
            }
        }
        Ok(())
    }

    pub fn request(&self, original: &str, reconstructed: &str, sample: u32) -> ChatRequest {
        // fill text2 first so a literal "{text2}" inside the original is not expanded
        let user = self
            .user_template
            .replacen("{text2}", reconstructed, 1)
            .replacen("{text1}", original, 1);
        ChatRequest::new(
            &self.model,
            vec![ChatMessage::system(&self.system_template), ChatMessage::user(user)],
        )
        .with_sample(sample)
    }
}

/// First integer in `0..=10` in the reply. A decimal number ahead of it makes
/// the reply unparseable; out-of-range integers are skipped.
pub fn parse_score(reply: &str) -> Option<u8> {
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"-?\d+(?:[.,]\d+)?").unwrap());
    for m in re.find_iter(reply) {
        let tok = m.as_str();
        if tok.contains(['.', ',']) {
            return None;
        }
        if tok.starts_with('-') {
            continue;
        }
        if let Ok(v) = tok.parse::<u32>() {
            if v <= MAX_SCORE as u32 {
                return Some(v as u8);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub score: Option<u8>,
    pub attempts: u32,
}

/// Asks the judge up to `max_retries + 1` times. A reply without a usable
/// score yields `score: None`, which reports count as undefined.
pub fn judge_score(
    original: &str,
    reconstructed: &str,
    gateway: &Gateway,
    config: &JudgeConfig,
) -> Result<JudgeOutcome> {
    config.validate()?;
    let mut attempts = 0;
    for sample in 0..=config.max_retries {
        attempts += 1;
        let resp = gateway.complete_chat(&config.request(original, reconstructed, sample))?;
        if let Some(score) = parse_score(&resp.content) {
            return Ok(JudgeOutcome {
                score: Some(score),
                attempts,
            });
        }
        tracing::debug!(reply = %resp.content, "judge reply had no score");
    }
    Ok(JudgeOutcome {
        score: None,
        attempts,
    })
}
