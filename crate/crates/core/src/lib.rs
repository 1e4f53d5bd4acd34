//! Differentially private text sanitizers, reconstruction attacks against
//! their outputs, and PII-diff metrics to score those attacks.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod attacks;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod gateway;
pub mod judge;
pub mod manifest;
pub mod metrics;
pub mod mock;
pub mod pii;
pub mod record;
pub mod report;
pub mod rng;
pub mod sanitizer;
pub mod scalar;
pub mod sentence_dp;
pub mod synth;
pub mod word_dp;

pub use attacks::{
    build_finetune_pairs, build_instruction_prompt, run_blackbox_attack, run_generation_eval,
    AttackKind, AttackResult, BlackboxSettings, DemoPair, FinetunePair, GenerationSettings,
    InstructionTemplate,
};
pub use corpus::{load_corpus, Document};
pub use embedding::SearchMode;
pub use error::{Error, Result};
pub use gateway::{ChatMessage, ChatRequest, ChatResponse, Gateway, GatewayError, ResponseCache};
pub use judge::{judge_score, JudgeConfig};
pub use metrics::{aggregate, compute_doc_metrics, DocMetrics};
pub use pii::{extract_pii, PiiClass, PiiSet, PiiSpan, Tagger, TaggerConfig};
pub use record::{Mechanism, SanitizationRecord};
pub use report::CorpusReport;
pub use sanitizer::Sanitizer;
pub use sentence_dp::{clip_logits, dp_decode, ldp_budget, sample_next_token, SentenceDpConfig};
pub use word_dp::{sanitize_word_level, WordDpConfig};

/// Double-precision embedding table.
pub type EmbeddingTable = embedding::EmbeddingTable<f64>;
/// Single-precision embedding table, half the memory of the default.
pub type EmbeddingTableF32 = embedding::EmbeddingTable<f32>;
