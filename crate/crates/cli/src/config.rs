//! Run configuration: one JSON file with shared inputs plus a section per
//! command. Credentials never live here; endpoints name the environment
//! variable that holds their key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use dprecon::attacks::InstructionTemplate;
use dprecon::corpus::{load_corpus, truncate_doc, Document, DEFAULT_MAX_WORDS};
use dprecon::embedding::{load_embeddings, SearchMode, DEFAULT_DIM};
use dprecon::gateway::{HttpTransport, RetryPolicy};
use dprecon::mock::{EchoModel, FixedReplyModel, MemorizingModel};
use dprecon::sentence_dp::DEFAULT_PARAPHRASE_TEMPLATE;
use dprecon::{EmbeddingTable, Gateway, JudgeConfig, Mechanism, ResponseCache, Tagger, TaggerConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// JSONL corpus of target documents.
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
    pub embeddings: Option<EmbeddingsConfig>,
    #[serde(default)]
    pub tagger: TaggerConfig,
    #[serde(default)]
    pub endpoints: BTreeMap<String, Endpoint>,
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub sanitize: SanitizeSection,
    #[serde(default)]
    pub attack_blackbox: BlackboxSection,
    #[serde(default)]
    pub finetune_export: FinetuneSection,
    #[serde(default)]
    pub attack_whitebox_eval: WhiteboxSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_max_words() -> usize {
    DEFAULT_MAX_WORDS
}

fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingsConfig {
    pub path: PathBuf,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub search: SearchMode,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Endpoint {
    /// OpenAI-compatible chat completions.
    Openai {
        base_url: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        /// Model name sent on the wire, if it differs from the config id.
        #[serde(default)]
        remote_model: Option<String>,
    },
    MockEcho,
    MockMemorizing {
        corpus: PathBuf,
        #[serde(default = "default_similarity")]
        min_similarity: f64,
        #[serde(default)]
        strip_suffix: Option<String>,
    },
    MockFixed {
        replies: Vec<String>,
    },
}

fn default_timeout() -> u64 {
    60
}

fn default_similarity() -> f64 {
    0.15
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SanitizeSection {
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default = "default_budget")]
    pub budget: f64,
    /// Chat model used by `sentence_level_api`.
    #[serde(default)]
    pub paraphrase_model: Option<String>,
    #[serde(default = "default_paraphrase")]
    pub paraphrase_template: String,
    /// Logit server used by `sentence_level_exact`.
    #[serde(default)]
    pub logits: Option<LogitsEndpoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitsEndpoint {
    pub base_url: String,
    /// One vocabulary piece per line, line number = token id.
    pub vocab: PathBuf,
    #[serde(default)]
    pub eos: Option<u32>,
    pub clip_bound: f64,
    pub max_tokens: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_mechanism() -> Mechanism {
    Mechanism::WordLevel
}

fn default_budget() -> f64 {
    8.0
}

fn default_paraphrase() -> String {
    DEFAULT_PARAPHRASE_TEMPLATE.to_string()
}

impl Default for SanitizeSection {
    fn default() -> Self {
        SanitizeSection {
            mechanism: default_mechanism(),
            budget: default_budget(),
            paraphrase_model: None,
            paraphrase_template: default_paraphrase(),
            logits: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BlackboxSection {
    #[serde(default)]
    pub models: Vec<String>,
    /// Held-out documents for the demonstration pair. Without it one target
    /// document is held out instead.
    #[serde(default)]
    pub demo_corpus: Option<PathBuf>,
    #[serde(default)]
    pub template: Option<InstructionTemplate>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub judge: Option<JudgeConfig>,
    #[serde(default)]
    pub max_error_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneSection {
    pub aux_corpus: Option<PathBuf>,
    /// Evaluation documents the aux corpus must not overlap.
    #[serde(default)]
    pub exclude_corpus: Option<PathBuf>,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    dprecon::attacks::DEFAULT_SEPARATOR.to_string()
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            aux_corpus: None,
            exclude_corpus: None,
            separator: default_separator(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WhiteboxSection {
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub separator: Option<String>,
    #[serde(default)]
    pub judge: Option<JudgeConfig>,
    #[serde(default)]
    pub max_error_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepSection {
    #[serde(default)]
    pub budgets: Option<Vec<f64>>,
}

impl SweepSection {
    pub fn budgets(&self, mechanism: Mechanism) -> Vec<f64> {
        match (&self.budgets, mechanism) {
            (Some(b), _) => b.clone(),
            (None, Mechanism::WordLevel) => vec![1.0, 4.0, 8.0, 12.0, 32.0],
            (None, _) => vec![1.0, 1.5, 2.0],
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Relative paths in the config are relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.as_mut().map(fix);
        self.cache_dir.as_mut().map(fix);
        if let Some(e) = self.embeddings.as_mut() {
            fix(&mut e.path);
        }
        self.attack_blackbox.demo_corpus.as_mut().map(fix);
        self.finetune_export.aux_corpus.as_mut().map(fix);
        self.finetune_export.exclude_corpus.as_mut().map(fix);
        if let Some(l) = self.sanitize.logits.as_mut() {
            fix(&mut l.vocab);
        }
        for ep in self.endpoints.values_mut() {
            if let Endpoint::MockMemorizing { corpus, .. } = ep {
                fix(corpus);
            }
        }
    }

    pub fn load_targets(&self) -> Result<Vec<Document>> {
        let path = self.corpus.as_ref().context("config has no `corpus`")?;
        let docs = load_corpus(path)?;
        Ok(docs.iter().map(|d| truncate_doc(d, self.max_words)).collect())
    }

    pub fn load_table(&self) -> Result<EmbeddingTable> {
        let e = self.embeddings.as_ref().context("config has no `embeddings`")?;
        Ok(load_embeddings(&e.path, e.dim)?)
    }

    pub fn tagger(&self) -> Result<Tagger> {
        Ok(Tagger::from_config(&self.tagger)?)
    }

    pub fn gateway(&self) -> Result<Gateway> {
        let mut builder = Gateway::builder()
            .retry(self.retry)
            .max_in_flight(self.max_in_flight);
        if let Some(dir) = &self.cache_dir {
            builder = builder.cache(ResponseCache::open(dir)?);
        }
        for (id, ep) in &self.endpoints {
            builder = match ep {
                Endpoint::Openai { base_url, api_key_env, timeout_secs, remote_model } => {
                    let key = api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                    if let Some(k) = &key {
                        builder = builder.secret(k.clone());
                    }
                    let http = HttpTransport::new(base_url, key, Duration::from_secs(*timeout_secs));
                    match remote_model {
                        Some(name) => builder.route(id, Arc::new(Renamed { inner: http, model: name.clone() })),
                        None => builder.route(id, Arc::new(http)),
                    }
                }
                Endpoint::MockEcho => builder.route(id, Arc::new(EchoModel::new())),
                Endpoint::MockMemorizing { corpus, min_similarity, strip_suffix } => {
                    let docs = load_corpus(corpus)?;
                    let docs: Vec<Document> = docs.iter().map(|d| truncate_doc(d, self.max_words)).collect();
                    let mut m = MemorizingModel::new(&docs, *min_similarity);
                    if let Some(s) = strip_suffix {
                        m = m.strip_suffix(s.clone());
                    }
                    builder.route(id, Arc::new(m))
                }
                Endpoint::MockFixed { replies } => {
                    if replies.is_empty() {
                        bail!("endpoint {id}: mock-fixed needs at least one reply");
                    }
                    builder.route(id, Arc::new(FixedReplyModel::new(replies.clone())))
                }
            };
        }
        Ok(builder.build())
    }
}

/// Sends requests under a different model name than the config id.
struct Renamed {
    inner: HttpTransport,
    model: String,
}

impl dprecon::gateway::Transport for Renamed {
    fn send(
        &self,
        request: &dprecon::ChatRequest,
    ) -> Result<dprecon::gateway::Completion, dprecon::gateway::TransportError> {
        let mut req = request.clone();
        req.model = self.model.clone();
        self.inner.send(&req)
    }
}
