use rayon::prelude::*;

use crate::corpus::Document;
use crate::embedding::EmbeddingTable;
use crate::error::Result;
use crate::gateway::Gateway;
use crate::record::{Mechanism, SanitizationRecord};
use crate::scalar::Scalar;
use crate::sentence_dp::{api_paraphrase, dp_decode, LogitProvider, SentenceDpConfig};
use crate::word_dp::{sanitize_word_level, WordDpConfig};

/// Any of the text sanitizers, behind one interface.
pub trait Sanitizer: Sync {
    fn mechanism(&self) -> Mechanism;

    fn budget(&self) -> f64;

    fn sanitize(&self, doc_id: &str, text: &str) -> Result<SanitizationRecord>;

    /// Parallel over documents, output in input order.
    fn sanitize_all(&self, docs: &[Document]) -> Result<Vec<SanitizationRecord>> {
        docs.par_iter().map(|d| self.sanitize(&d.id, &d.text)).collect()
    }
}

pub struct WordLevel<'a, F> {
    pub table: &'a EmbeddingTable<F>,
    pub config: WordDpConfig,
}

impl<F: Scalar> Sanitizer for WordLevel<'_, F> {
    fn mechanism(&self) -> Mechanism {
        Mechanism::WordLevel
    }

    fn budget(&self) -> f64 {
        self.config.epsilon
    }

    fn sanitize(&self, doc_id: &str, text: &str) -> Result<SanitizationRecord> {
        sanitize_word_level(doc_id, text, self.table, &self.config)
    }
}

pub struct SentenceExact<'a, F> {
    pub provider: &'a dyn LogitProvider<F>,
    pub config: SentenceDpConfig,
}

impl<F: Scalar> Sanitizer for SentenceExact<'_, F> {
    fn mechanism(&self) -> Mechanism {
        Mechanism::SentenceLevelExact
    }

    fn budget(&self) -> f64 {
        self.config.temperature
    }

    fn sanitize(&self, doc_id: &str, text: &str) -> Result<SanitizationRecord> {
        dp_decode(doc_id, text, self.provider, &self.config)
    }
}

pub struct SentenceApi<'a> {
    pub gateway: &'a Gateway,
    pub model: String,
    pub temperature: f64,
    pub template: String,
}

impl Sanitizer for SentenceApi<'_> {
    fn mechanism(&self) -> Mechanism {
        Mechanism::SentenceLevelApi
    }

    fn budget(&self) -> f64 {
        self.temperature
    }

    fn sanitize(&self, doc_id: &str, text: &str) -> Result<SanitizationRecord> {
        api_paraphrase(doc_id, text, self.gateway, &self.model, self.temperature, &self.template)
    }
}
