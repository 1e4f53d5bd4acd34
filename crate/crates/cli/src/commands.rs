use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use dprecon::attacks::{
    build_finetune_pairs, pick_demo, run_blackbox_attack, run_generation_eval, BlackboxSettings,
    DemoPair, GenerationSettings,
};
use dprecon::corpus::{load_corpus, read_jsonl, write_jsonl, Document};
use dprecon::manifest::{write_atomic, RunManifest};
use dprecon::rng::seeded;
use dprecon::sanitizer::{Sanitizer, SentenceApi, SentenceExact, WordLevel};
use dprecon::sentence_dp::{HttpLogitProvider, SentenceDpConfig};
use dprecon::{
    AttackResult, CorpusReport, EmbeddingTable, Gateway, Mechanism, SanitizationRecord,
    WordDpConfig,
};
use rand::Rng;
use serde_json::json;

use crate::config::Config;

/// Output directory for one invocation plus the manifest being filled in.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn create(out: &Path, command: &str, cfg: &Config) -> Result<Self> {
        let snapshot = serde_json::to_value(cfg)?;
        let hash = dprecon::manifest::content_hash(&serde_json::to_vec(&json!([command, snapshot]))?);
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let mut dir = out.join(format!("{stamp}-{}", &hash[..12]));
        let mut n = 1;
        while dir.exists() {
            dir = out.join(format!("{stamp}-{}-{n}", &hash[..12]));
            n += 1;
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut manifest = RunManifest::new(command, snapshot);
        manifest.seeds.push(cfg.seed);
        manifest.tagger_fingerprint = Some(cfg.tagger.fingerprint());
        Ok(Run { dir, manifest })
    }

    pub fn write_jsonl<T: serde::Serialize>(&mut self, name: &str, items: &[T]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_jsonl(&path, items)?;
        self.record(&path)?;
        Ok(path)
    }

    /// Hashes an output, keyed by its path inside the run directory.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        let hash = dprecon::manifest::file_hash(path)?;
        let key = path.strip_prefix(&self.dir).unwrap_or(path).to_path_buf();
        self.manifest.outputs.insert(key, hash);
        Ok(())
    }

    pub fn write_report(&mut self, sub: &Path, report: &CorpusReport) -> Result<()> {
        for path in report.write_all(&self.dir.join(sub))? {
            self.record(&path)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<serde_json::Value> {
        let manifest = self.manifest.write(&self.dir)?;
        Ok(json!({
            "run_dir": self.dir,
            "manifest": manifest,
            "outputs": self.manifest.outputs,
        }))
    }
}

/// Borrowed resources a sanitizer may need.
pub struct Resources {
    pub table: Option<EmbeddingTable>,
    pub logits: Option<HttpLogitProvider>,
    pub gateway: Gateway,
}

impl Resources {
    pub fn load(cfg: &Config) -> Result<Self> {
        let table = match cfg.sanitize.mechanism {
            Mechanism::WordLevel => Some(cfg.load_table()?),
            _ => None,
        };
        let logits = match (&cfg.sanitize.mechanism, &cfg.sanitize.logits) {
            (Mechanism::SentenceLevelExact, Some(l)) => {
                let vocab = std::fs::read_to_string(&l.vocab)
                    .with_context(|| format!("reading vocabulary {}", l.vocab.display()))?
                    .lines()
                    .map(str::to_string)
                    .collect();
                Some(HttpLogitProvider::new(&l.base_url, vocab, l.eos, Duration::from_secs(l.timeout_secs)))
            }
            (Mechanism::SentenceLevelExact, None) => bail!("sentence_level_exact needs `sanitize.logits`"),
            _ => None,
        };
        Ok(Resources { table, logits, gateway: cfg.gateway()? })
    }

    pub fn sanitizer<'a>(&'a self, cfg: &Config) -> Result<Box<dyn Sanitizer + 'a>> {
        let s = &cfg.sanitize;
        Ok(match s.mechanism {
            Mechanism::WordLevel => {
                let table = self.table.as_ref().context("no embedding table loaded")?;
                let mut config = WordDpConfig::new(s.budget, table.dim(), cfg.seed);
                if let Some(e) = &cfg.embeddings {
                    config.search = e.search;
                }
                Box::new(WordLevel { table, config })
            }
            Mechanism::SentenceLevelExact => {
                let l = s.logits.as_ref().context("no logit endpoint configured")?;
                let mut config = SentenceDpConfig::new(s.budget, l.clip_bound, l.max_tokens);
                config.paraphrase_template = s.paraphrase_template.clone();
                config.seed = cfg.seed;
                Box::new(SentenceExact::<f64> { provider: self.logits.as_ref().context("no logit provider")?, config })
            }
            Mechanism::SentenceLevelApi => Box::new(SentenceApi {
                gateway: &self.gateway,
                model: s.paraphrase_model.clone().context("sentence_level_api needs `sanitize.paraphrase_model`")?,
                temperature: s.budget,
                template: s.paraphrase_template.clone(),
            }),
        })
    }
}

fn note_sanitizer(manifest: &mut RunManifest, cfg: &Config) {
    manifest.mechanism = Some(cfg.sanitize.mechanism.to_string());
    if !manifest.budgets.contains(&cfg.sanitize.budget) {
        manifest.budgets.push(cfg.sanitize.budget);
    }
    if cfg.sanitize.mechanism != Mechanism::WordLevel {
        manifest.template_hashes.insert(
            "paraphrase".into(),
            dprecon::manifest::content_hash(cfg.sanitize.paraphrase_template.as_bytes()),
        );
    }
    if let Some(m) = &cfg.sanitize.paraphrase_model {
        push_model(manifest, m);
    }
}

fn push_model(manifest: &mut RunManifest, model: &str) {
    if !manifest.models.iter().any(|m| m == model) {
        manifest.models.push(model.to_string());
    }
}

pub fn sanitize(cfg: &Config, out: &Path) -> Result<serde_json::Value> {
    let mut run = Run::create(out, "sanitize", cfg)?;
    let docs = cfg.load_targets()?;
    run.manifest.inputs.extend(cfg.corpus.clone());
    let res = Resources::load(cfg)?;
    let records = res.sanitizer(cfg)?.sanitize_all(&docs)?;
    note_sanitizer(&mut run.manifest, cfg);
    run.write_jsonl("sanitized.jsonl", &records)?;
    run.finish()
}

fn load_records(input: Option<&Path>, cfg: &Config, res: &Resources) -> Result<Vec<SanitizationRecord>> {
    match input {
        Some(path) => {
            let recs: Vec<SanitizationRecord> = read_jsonl(path)?;
            if recs.is_empty() {
                bail!("{} holds no sanitization records", path.display());
            }
            Ok(recs)
        }
        None => Ok(res.sanitizer(cfg)?.sanitize_all(&cfg.load_targets()?)?),
    }
}

/// Demonstration pair plus the targets it was held out from.
fn demo_and_targets(
    cfg: &Config,
    res: &Resources,
    mut records: Vec<SanitizationRecord>,
) -> Result<(DemoPair, Vec<SanitizationRecord>)> {
    if let Some(path) = &cfg.attack_blackbox.demo_corpus {
        let pool = load_corpus(path)?;
        let ids: Vec<&str> = records.iter().map(|r| r.doc_id.as_str()).collect();
        let originals: Vec<&str> = records.iter().map(|r| r.original.as_str()).collect();
        let pool: Vec<Document> = pool.into_iter().filter(|d| !originals.contains(&d.text.as_str())).collect();
        let doc = pick_demo(&pool, &ids, cfg.seed).context("demo corpus has no document outside the targets")?;
        let rec = res.sanitizer(cfg)?.sanitize(&doc.id, &doc.text)?;
        return Ok((DemoPair::from(&rec), records));
    }
    if records.len() < 2 {
        bail!("need at least two documents to hold one out as the demonstration");
    }
    let i = seeded(cfg.seed).random_range(0..records.len());
    let demo = records.remove(i);
    Ok((DemoPair::from(&demo), records))
}

fn blackbox_results(
    cfg: &Config,
    res: &Resources,
    records: Vec<SanitizationRecord>,
    manifest: &mut RunManifest,
) -> Result<Vec<AttackResult>> {
    let section = &cfg.attack_blackbox;
    if section.models.is_empty() {
        bail!("no attack model configured (attack_blackbox.models or --model)");
    }
    let template = section.template.clone().unwrap_or_default();
    let (demo, targets) = demo_and_targets(cfg, res, records)?;
    manifest.template_hashes.insert("instruction".into(), template.hash());
    if let Some(j) = &section.judge {
        manifest.template_hashes.insert(
            "judge".into(),
            dprecon::manifest::content_hash(format!("{}\n{}", j.system_template, j.user_template).as_bytes()),
        );
        push_model(manifest, &j.model);
    }
    let tagger = cfg.tagger()?;
    let mut all = Vec::new();
    for model in &section.models {
        push_model(manifest, model);
        let mut settings = BlackboxSettings::new(model);
        settings.temperature = section.temperature;
        settings.judge = section.judge.clone();
        if let Some(f) = section.max_error_fraction {
            settings.max_error_fraction = f;
        }
        all.extend(run_blackbox_attack(&targets, &res.gateway, &template, &demo, &tagger, &settings)?);
    }
    Ok(all)
}

pub fn attack_blackbox(cfg: &Config, input: Option<&Path>, out: &Path) -> Result<serde_json::Value> {
    let mut run = Run::create(out, "attack-blackbox", cfg)?;
    let res = Resources::load(cfg)?;
    let records = load_records(input, cfg, &res)?;
    run.manifest.inputs.extend(input.map(Path::to_path_buf).or(cfg.corpus.clone()));
    note_sanitizer(&mut run.manifest, cfg);
    let results = blackbox_results(cfg, &res, records, &mut run.manifest)?;
    run.write_jsonl("attack_results.jsonl", &results)?;
    run.finish()
}

pub fn finetune_export(cfg: &Config, out: &Path) -> Result<serde_json::Value> {
    let mut run = Run::create(out, "finetune-export", cfg)?;
    let section = &cfg.finetune_export;
    let aux_path = section.aux_corpus.as_ref().context("config has no `finetune_export.aux_corpus`")?;
    let aux: Vec<Document> = load_corpus(aux_path)?
        .iter()
        .map(|d| dprecon::corpus::truncate_doc(d, cfg.max_words))
        .collect();
    let exclude = match &section.exclude_corpus {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    };
    run.manifest.inputs.push(aux_path.clone());
    run.manifest.inputs.extend(section.exclude_corpus.clone());
    let res = Resources::load(cfg)?;
    let data = build_finetune_pairs(&aux, &exclude, res.sanitizer(cfg)?.as_ref(), &section.separator)?;
    note_sanitizer(&mut run.manifest, cfg);
    run.write_jsonl("finetune_pairs.jsonl", &data.pairs)?;
    let mut value = run.finish()?;
    value["separator"] = json!(data.separator);
    Ok(value)
}

pub fn attack_whitebox_eval(cfg: &Config, input: Option<&Path>, out: &Path) -> Result<serde_json::Value> {
    let mut run = Run::create(out, "attack-whitebox-eval", cfg)?;
    let section = &cfg.attack_whitebox_eval;
    if section.models.is_empty() {
        bail!("no generation model configured (attack_whitebox_eval.models or --model)");
    }
    let res = Resources::load(cfg)?;
    let records = load_records(input, cfg, &res)?;
    run.manifest.inputs.extend(input.map(Path::to_path_buf).or(cfg.corpus.clone()));
    note_sanitizer(&mut run.manifest, cfg);
    let tagger = cfg.tagger()?;
    let separator = section.separator.clone().unwrap_or_else(|| cfg.finetune_export.separator.clone());
    let mut results = Vec::new();
    for model in &section.models {
        push_model(&mut run.manifest, model);
        let mut settings = GenerationSettings::new(model, &separator);
        settings.judge = section.judge.clone();
        if let Some(f) = section.max_error_fraction {
            settings.max_error_fraction = f;
        }
        results.extend(run_generation_eval(&records, &res.gateway, &tagger, &settings)?);
    }
    run.write_jsonl("attack_results.jsonl", &results)?;
    run.finish()
}

/// `*.jsonl` attack results from files or the top level of directories.
fn collect_results(inputs: &[PathBuf]) -> Result<Vec<AttackResult>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("attack_results") && n.ends_with(".jsonl")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    let mut results = Vec::new();
    for f in &files {
        results.extend(read_jsonl::<AttackResult>(f)?);
    }
    if results.is_empty() {
        bail!("no attack results found in {inputs:?}");
    }
    Ok(results)
}

pub fn evaluate(cfg: &Config, inputs: &[PathBuf], out: &Path) -> Result<serde_json::Value> {
    let results = collect_results(inputs)?;
    let mut run = Run::create(out, "evaluate", cfg)?;
    run.manifest.inputs.extend(inputs.iter().cloned());
    let report = CorpusReport::from_results(&results)?;
    run.write_report(Path::new(""), &report)?;
    run.finish()
}

pub fn sweep(cfg: &Config, out: &Path) -> Result<serde_json::Value> {
    let mut run = Run::create(out, "sweep", cfg)?;
    run.manifest.inputs.extend(cfg.corpus.clone());
    let budgets = cfg.sweep.budgets(cfg.sanitize.mechanism);
    if budgets.is_empty() {
        bail!("sweep has no budgets");
    }
    let res = Resources::load(cfg)?;
    let docs = cfg.load_targets()?;
    let mut combined = Vec::new();
    let mut points = Vec::new();
    for budget in budgets {
        let mut point_cfg = cfg.clone();
        point_cfg.sanitize.budget = budget;
        note_sanitizer(&mut run.manifest, &point_cfg);
        let records = res.sanitizer(&point_cfg)?.sanitize_all(&docs)?;
        let results = blackbox_results(&point_cfg, &res, records, &mut run.manifest)?;
        let sub = PathBuf::from(format!("{}-{budget}", cfg.sanitize.mechanism.budget_symbol()));
        std::fs::create_dir_all(run.dir.join(&sub))?;
        run.write_jsonl(&sub.join("attack_results.jsonl").to_string_lossy(), &results)?;
        run.write_report(&sub, &CorpusReport::from_results(&results)?)?;
        points.push(sub);
        combined.extend(results);
    }
    let report = CorpusReport::from_results(&combined)?;
    let csv = run.dir.join("sweep.csv");
    write_atomic(&csv, &report.to_csv()?)?;
    run.record(&csv)?;
    let md = run.dir.join("sweep.md");
    write_atomic(&md, report.to_markdown().as_bytes())?;
    run.record(&md)?;
    let mut value = run.finish()?;
    value["points"] = json!(points);
    Ok(value)
}

/// Renders one or more `report.json` files as markdown tables. The output
/// depends only on the input files.
pub fn report(inputs: &[PathBuf], out: Option<&Path>) -> Result<serde_json::Value> {
    if inputs.is_empty() {
        bail!("report needs at least one report.json");
    }
    let mut rows = Vec::new();
    let mut policy = None;
    for path in inputs {
        let path = if path.is_dir() { path.join("report.json") } else { path.clone() };
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let r: CorpusReport = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        policy.get_or_insert(r.undefined_policy.clone());
        rows.extend(r.rows);
    }
    let merged = CorpusReport { undefined_policy: policy.unwrap_or_default(), rows };
    let md = merged.to_markdown();
    match out {
        Some(path) => {
            write_atomic(path, md.as_bytes())?;
            Ok(json!({ "report": path }))
        }
        None => {
            print!("{md}");
            Ok(json!({ "rows": merged.rows.len() }))
        }
    }
}
