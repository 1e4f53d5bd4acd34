use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    WordLevel,
    SentenceLevelExact,
    SentenceLevelApi,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::WordLevel => "word_level",
            Mechanism::SentenceLevelExact => "sentence_level_exact",
            Mechanism::SentenceLevelApi => "sentence_level_api",
        }
    }

    /// Symbol used for the budget in reports: epsilon for word level, T otherwise.
    pub fn budget_symbol(self) -> &'static str {
        match self {
            Mechanism::WordLevel => "eps",
            _ => "T",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word_level" | "word" => Ok(Mechanism::WordLevel),
            "sentence_level_exact" | "exact" => Ok(Mechanism::SentenceLevelExact),
            "sentence_level_api" | "api" => Ok(Mechanism::SentenceLevelApi),
            other => Err(format!("unknown mechanism {other:?}")),
        }
    }
}

/// Provenance of one sanitized document. Written once, never edited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizationRecord {
    pub doc_id: String,
    pub original: String,
    pub sanitized: String,
    pub mechanism: Mechanism,
    /// epsilon for word level, temperature for sentence level
    pub budget: f64,
    pub seed: u64,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_stats: Option<WordStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode_stats: Option<DecodeStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WordStats {
    pub words: usize,
    pub oov: usize,
    pub replaced: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub clip_bound: f64,
    pub max_tokens: usize,
    pub tokens_sampled: usize,
    /// LDP budget spent on the sampled tokens, 2 * tokens * C / T
    pub ldp_epsilon: f64,
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
