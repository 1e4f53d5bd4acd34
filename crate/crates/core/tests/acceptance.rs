//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Oracles below are written independently of
//! the library code they check.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dprecon::corpus::{write_jsonl, Document};
use dprecon::embedding::SearchMode;
use dprecon::gateway::{ChatRequest, Completion, Transport, TransportError};
use dprecon::metrics::{aggregate, compute_doc_metrics};
use dprecon::mock::{EchoModel, MemorizingModel};
use dprecon::pii::{PiiClass, PiiSet, Tagger};
use dprecon::rng::seeded;
use dprecon::sentence_dp::{clip_logits, sample_next_token};
use dprecon::synth::{planted_corpus, pseudo_words, synthetic_sentences, synthetic_table};
use dprecon::word_dp::{perturb_row, sample_laplace_noise, sanitize_corpus_word_level};
use dprecon::{
    run_blackbox_attack, AttackResult, BlackboxSettings, CorpusReport, DemoPair, EmbeddingTable,
    Gateway, InstructionTemplate, JudgeConfig, ResponseCache, WordDpConfig,
};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    check(took <= limit, format!("took {took:.1?}, limit {limit:?}"))
}

const SYNTH_DIM: usize = 50;
const SYNTH_MIN_SCALE: f64 = 0.05;
const SYNTH_MAX_SCALE: f64 = 2.0;

fn synth_vocab() -> (Vec<String>, EmbeddingTable) {
    let words = pseudo_words(10_000, 11);
    let table = synthetic_table(&words, SYNTH_DIM, SYNTH_MIN_SCALE, SYNTH_MAX_SCALE, 12).unwrap();
    (words, table)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn metric_dp_ratio() -> Outcome {
    let start = Instant::now();
    let points = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.5, 1.5], [-1.0, 0.5]];
    let rows = points.iter().enumerate().map(|(i, p)| (format!("w{i}"), p.to_vec()));
    let table = EmbeddingTable::from_rows(rows, 2).unwrap();
    let (eps, n) = (1.0, 1_000_000usize);
    let k = points.len();

    let mut freq = vec![vec![0usize; k]; k];
    for (x, counts) in freq.iter_mut().enumerate() {
        let mut rng = seeded(100 + x as u64);
        for _ in 0..n {
            counts[perturb_row(&table, x, eps, SearchMode::Accelerated, &mut rng).unwrap()] += 1;
        }
    }
    let p = |x: usize, o: usize| freq[x][o] as f64 / n as f64;
    let var = |q: f64| q * (1.0 - q) / n as f64;
    let mut worst = f64::NEG_INFINITY;
    for x in 0..k {
        for y in 0..k {
            let bound = (eps * dist(&points[x], &points[y])).exp();
            for o in 0..k {
                let excess = p(x, o) - bound * p(y, o);
                let sigma = (var(p(x, o)) + bound * bound * var(p(y, o))).sqrt();
                let z = if sigma > 0.0 { excess / sigma } else if excess > 0.0 { f64::INFINITY } else { 0.0 };
                worst = worst.max(z);
                check(z <= 3.0, format!("x={x} x'={y} o={o}: excess {excess:.2e} is {z:.1} sigma"))?;
            }
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("25 pairs x 5 outputs, worst excess {worst:.2} sigma"))
}

fn noise_calibration() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(2);
    let n = 1_000_000;
    let mut total = 0.0;
    for _ in 0..n {
        let z: Vec<f64> = sample_laplace_noise(8.0, 50, &mut rng).unwrap();
        total += z.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let mean = total / n as f64;
    check((mean - 6.25).abs() <= 0.01, format!("mean |z| = {mean:.5}"))?;
    within(Duration::from_secs(30), start)?;
    Ok(format!("mean |z| = {mean:.5}"))
}

fn self_retention(originals: &[Document], sanitized: &[String]) -> f64 {
    let (mut kept, mut total) = (0usize, 0usize);
    for (d, s) in originals.iter().zip(sanitized) {
        let a: Vec<&str> = d.text.split(' ').collect();
        let b: Vec<&str> = s.split(' ').collect();
        assert_eq!(a.len(), b.len(), "word count changed");
        total += a.len();
        kept += a.iter().zip(&b).filter(|(x, y)| x.eq_ignore_ascii_case(y)).count();
    }
    kept as f64 / total as f64
}

fn non_decreasing(values: &[Option<f64>]) -> bool {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    defined.windows(2).all(|w| w[0] <= w[1] + 1e-12)
}

fn epsilon_monotonicity() -> Outcome {
    let start = Instant::now();
    let budgets = [1.0, 4.0, 8.0, 12.0, 32.0];
    let (words, table) = synth_vocab();
    let sentences = synthetic_sentences(&words, 1000, 12, 13);
    let mut retention = Vec::new();
    for &eps in &budgets {
        let recs = sanitize_corpus_word_level(&sentences, &table, &WordDpConfig::new(eps, SYNTH_DIM, 7)).unwrap();
        let out: Vec<String> = recs.into_iter().map(|r| r.sanitized).collect();
        retention.push(self_retention(&sentences, &out));
    }
    check(
        retention.windows(2).all(|w| w[0] < w[1]),
        format!("retention not strictly increasing: {retention:.4?}"),
    )?;

    let planted = planted_corpus(&words, 50, 8, 21);
    let tagger = Tagger::builtin(&planted.gazetteer);
    let (mut recall, mut precision) = (Vec::new(), Vec::new());
    for &eps in &budgets {
        let recs = sanitize_corpus_word_level(&planted.docs, &table, &WordDpConfig::new(eps, SYNTH_DIM, 7)).unwrap();
        let gw = Gateway::builder()
            .route("memorizer", Arc::new(MemorizingModel::new(&planted.docs, 0.15)))
            .build();
        let results = attack(&recs, &gw, &tagger, "memorizer", None);
        let metrics: Vec<_> = results.iter().filter_map(|r| r.metrics).collect();
        let agg = aggregate(&metrics).unwrap();
        recall.push(agg.recall_pct.value);
        precision.push(agg.precision_pct.value);
    }
    check(non_decreasing(&recall), format!("recall not monotone: {recall:.2?}"))?;
    check(non_decreasing(&precision), format!("precision not monotone: {precision:.2?}"))?;
    within(Duration::from_secs(180), start)?;
    Ok(format!(
        "retention {retention:.4?}; recall {recall:.1?}; precision {precision:.1?}"
    ))
}

fn brute_force_nn(table: &EmbeddingTable, q: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for row in 0..table.len() {
        let d: f64 = table.vector(row).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, row);
        }
    }
    best.1
}

fn nn_oracle() -> Outcome {
    let start = Instant::now();
    let (_, table) = synth_vocab();
    let mut rng = seeded(4);
    let mut mismatches = 0;
    for i in 0..10_000 {
        let query: Vec<f64> = if i % 2 == 0 {
            // noisy copy of a vocabulary row, the sanitizer's query shape
            let row = rng.random_range(0..table.len());
            let eps = [1.0, 4.0, 12.0, 32.0][i % 4];
            let z: Vec<f64> = sample_laplace_noise(eps, SYNTH_DIM, &mut rng).unwrap();
            table.vector(row).iter().zip(&z).map(|(a, b)| a + b).collect()
        } else {
            (0..SYNTH_DIM).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        let fast = table.nearest_row(&query, SearchMode::Accelerated).unwrap();
        if fast != brute_force_nn(&table, &query) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of 10000 queries disagree"))?;
    within(Duration::from_secs(60), start)?;
    Ok("10000/10000 queries agree".into())
}

/// Plain-vector set arithmetic, no sharing with the library.
fn oracle_metrics(c: &[u8], ct: &[u8], ch: &[u8]) -> (bool, Option<f64>, Option<f64>) {
    let matched = c.iter().filter(|x| ch.contains(x) && !ct.contains(x)).count();
    let removed = c.iter().filter(|x| !ct.contains(x)).count();
    let introduced = ch.iter().filter(|x| !ct.contains(x)).count();
    let ratio = |n: usize, d: usize| if d == 0 { None } else { Some(n as f64 / d as f64) };
    (matched > 0, ratio(matched, removed), ratio(matched, introduced))
}

fn to_set(items: &[u8]) -> PiiSet {
    let classes = [PiiClass::Person, PiiClass::Gpe, PiiClass::Date];
    items
        .iter()
        .map(|&i| (classes[i as usize % 3], format!("item{i}")))
        .collect()
}

fn metrics_oracle() -> Outcome {
    let start = Instant::now();
    let hand = compute_doc_metrics(&to_set(&[0, 1, 2]), &to_set(&[0]), &to_set(&[0, 1]));
    check(
        hand.recall == Some(0.5) && hand.precision == Some(1.0) && hand.succ,
        format!("hand example gave {hand:?}"),
    )?;
    let mut rng = seeded(5);
    let draw = |rng: &mut rand_chacha::ChaCha20Rng| -> Vec<u8> {
        let set: BTreeSet<u8> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0..10)).collect();
        set.into_iter().collect()
    };
    for i in 0..10_000 {
        let (c, ct, ch) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let got = compute_doc_metrics(&to_set(&c), &to_set(&ct), &to_set(&ch));
        let want = oracle_metrics(&c, &ct, &ch);
        check(
            (got.succ, got.recall, got.precision) == want,
            format!("triple {i} C={c:?} C~={ct:?} C^={ch:?}: got {got:?}, want {want:?}"),
        )?;
    }
    within(Duration::from_secs(10), start)?;
    Ok("hand example and 10000 random triples agree".into())
}

fn exponential_mechanism() -> Outcome {
    check(
        clip_logits(&[3.0f64, 4.0], 1.0).unwrap() == vec![0.6, 0.8],
        "clip_logits((3,4), 1) is not exactly (0.6, 0.8)",
    )?;
    let logits = [2.0f64, 1.0, 0.5, 0.0, -0.5, 1.5, 3.0, -1.0, 0.25, 2.5];
    let clip = 1e3; // wide enough that clipping is the identity
    let n = 100_000;
    let chi = ChiSquared::new((logits.len() - 1) as f64).unwrap();
    let mut report = Vec::new();
    for (k, &t) in [1.0f64, 1.5, 2.0].iter().enumerate() {
        let weights: Vec<f64> = logits.iter().map(|u| (u / t).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut counts = vec![0usize; logits.len()];
        let mut rng = seeded(k as u64);
        for _ in 0..n {
            counts[sample_next_token(&logits, clip, t, &mut rng).unwrap()] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&o, w)| {
                let e = n as f64 * w / total;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - chi.cdf(stat);
        check(p > 0.01, format!("T={t}: chi2={stat:.2}, p={p:.4}"))?;
        report.push(format!("T={t} p={p:.3}"));
    }
    Ok(report.join(", "))
}

fn attack(
    records: &[dprecon::SanitizationRecord],
    gateway: &Gateway,
    tagger: &Tagger,
    model: &str,
    judge: Option<JudgeConfig>,
) -> Vec<AttackResult> {
    let demo = DemoPair {
        doc_id: "demo".into(),
        original: "Held out demonstration text about Zyx Qorb.".into(),
        sanitized: "held out demonstration text about zyx qorb.".into(),
    };
    let mut settings = BlackboxSettings::new(model);
    settings.judge = judge;
    run_blackbox_attack(records, gateway, &InstructionTemplate::default(), &demo, tagger, &settings).unwrap()
}

fn end_to_end_mock() -> Outcome {
    let start = Instant::now();
    let (words, table) = synth_vocab();
    let planted = planted_corpus(&words, 50, 8, 21);
    let tagger = Tagger::builtin(&planted.gazetteer);
    let recs = sanitize_corpus_word_level(&planted.docs, &table, &WordDpConfig::new(12.0, SYNTH_DIM, 7)).unwrap();
    let gw = Gateway::builder()
        .route("memorizer", Arc::new(MemorizingModel::new(&planted.docs, 0.15)))
        .route("echo", Arc::new(EchoModel::new()))
        .build();

    let mem: Vec<_> = attack(&recs, &gw, &tagger, "memorizer", None).iter().filter_map(|r| r.metrics).collect();
    check(mem.len() == 50, format!("{} of 50 memorizer results scored", mem.len()))?;
    let agg = aggregate(&mem).unwrap();
    check(agg.succ_pct == 100.0, format!("memorizer Succ {:.2}%", agg.succ_pct))?;
    check(
        agg.recall_pct.value == Some(100.0) && agg.recall_pct.n_defined == 50,
        format!("memorizer Recall {:?}", agg.recall_pct),
    )?;

    let echo: Vec<_> = attack(&recs, &gw, &tagger, "echo", None).iter().filter_map(|r| r.metrics).collect();
    let echo_agg = aggregate(&echo).unwrap();
    check(echo_agg.succ_pct == 0.0, format!("echo Succ {:.2}%", echo_agg.succ_pct))?;
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "memorizer Succ {:.0}% Recall {:.0}%, echo Succ {:.0}%",
        agg.succ_pct,
        agg.recall_pct.value.unwrap(),
        echo_agg.succ_pct
    ))
}

struct Unreachable;

impl Transport for Unreachable {
    fn send(&self, _: &ChatRequest) -> Result<Completion, TransportError> {
        Err(TransportError::Network("offline".into()))
    }
}

struct FixedJudge;

impl Transport for FixedJudge {
    fn send(&self, req: &ChatRequest) -> Result<Completion, TransportError> {
        let text = req.last_user().unwrap_or_default();
        Ok(Completion::text(format!("Score: {}", text.len() % 11)))
    }
}

fn run_and_write(dir: &std::path::Path, live: bool, cache: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    let (words, table) = synth_vocab();
    let planted = planted_corpus(&words, 20, 6, 33);
    let tagger = Tagger::builtin(&planted.gazetteer);
    let recs = sanitize_corpus_word_level(&planted.docs, &table, &WordDpConfig::new(8.0, SYNTH_DIM, 9)).unwrap();
    let builder = Gateway::builder().cache(ResponseCache::open(cache).unwrap());
    let gw = if live {
        builder
            .route("memorizer", Arc::new(MemorizingModel::new(&planted.docs, 0.15)))
            .route("judge", Arc::new(FixedJudge))
            .build()
    } else {
        builder
            .route("memorizer", Arc::new(Unreachable))
            .route("judge", Arc::new(Unreachable))
            .build()
    };
    let results = attack(&recs, &gw, &tagger, "memorizer", Some(JudgeConfig::new("judge")));
    if !live {
        assert_eq!(gw.network_calls(), 0, "replay reached the transport");
    }
    let results_path = dir.join("attack_results.jsonl");
    write_jsonl(&results_path, &results).unwrap();
    let report = CorpusReport::from_results(&results).unwrap();
    report.write_all(dir).unwrap();
    let mut files = std::fs::read(&results_path).unwrap();
    files.extend(std::fs::read(dir.join("report.csv")).unwrap());
    (files, std::fs::read(dir.join("report.json")).unwrap())
}

fn replay() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cache = root.path().join("cache");
    let (first, second) = (root.path().join("run1"), root.path().join("run2"));
    std::fs::create_dir_all(&first).unwrap();
    std::fs::create_dir_all(&second).unwrap();
    let (results_a, report_a) = run_and_write(&first, true, &cache);
    let (results_b, report_b) = run_and_write(&second, false, &cache);
    check(results_a == results_b, "attack results differ on replay")?;
    check(report_a == report_b, "report differs on replay")?;
    Ok(format!(
        "{} + {} bytes identical with the transport offline",
        results_a.len(),
        report_a.len()
    ))
}

/// Optional live check; needs a chat endpoint and a real embedding file.
fn live_direction() -> Option<Outcome> {
    let key_var = "DPRECON_LIVE_API_KEY";
    let base = std::env::var("DPRECON_LIVE_BASE_URL").ok()?;
    let model = std::env::var("DPRECON_LIVE_MODEL").ok()?;
    let embeddings = std::env::var("DPRECON_LIVE_EMBEDDINGS").ok()?;
    std::env::var(key_var).ok()?;
    Some((|| {
        let table = dprecon::embedding::load_embeddings::<f64>(&embeddings, 50).map_err(|e| e.to_string())?;
        let transport = dprecon::gateway::HttpTransport::from_env(&base, Some(key_var), Duration::from_secs(60));
        let gw = Gateway::builder().route(&model, Arc::new(transport)).build();
        let paragraph = Document::new(
            "live",
            "It was the best of times, it was the worst of times, it was the age of wisdom, \
             it was the age of foolishness, in London and in Paris, in the year 1775.",
        );
        let demo_doc = Document::new(
            "demo",
            "Call me Ishmael. Some years ago I went to sea from Manhattan.",
        );
        let tagger = Tagger::builtin(&Default::default());
        let mut scores = Vec::new();
        for eps in [4.0, 12.0] {
            let cfg = WordDpConfig::new(eps, 50, 1);
            let rec = dprecon::sanitize_word_level(&paragraph.id, &paragraph.text, &table, &cfg).map_err(|e| e.to_string())?;
            let demo_rec = dprecon::sanitize_word_level(&demo_doc.id, &demo_doc.text, &table, &cfg).map_err(|e| e.to_string())?;
            let mut settings = BlackboxSettings::new(&model);
            settings.judge = Some(JudgeConfig::new(&model));
            let out = run_blackbox_attack(
                &[rec],
                &gw,
                &InstructionTemplate::default(),
                &DemoPair::from(&demo_rec),
                &tagger,
                &settings,
            )
            .map_err(|e| e.to_string())?;
            scores.push(out[0].score);
        }
        check(scores[1] >= scores[0], format!("eps=12 score {:?} < eps=4 score {:?}", scores[1], scores[0]))?;
        Ok(format!("scores eps=4 {:?}, eps=12 {:?}", scores[0], scores[1]))
    })())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 metric-DP ratio", metric_dp_ratio),
        ("2 noise calibration", noise_calibration),
        ("3 epsilon monotonicity", epsilon_monotonicity),
        ("4 nearest-neighbour oracle", nn_oracle),
        ("5 metrics oracle", metrics_oracle),
        ("6 exponential mechanism", exponential_mechanism),
        ("7 end-to-end mock attack", end_to_end_mock),
        ("8 replay", replay),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail}) [{:.1?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why}) [{:.1?}]", start.elapsed());
            }
        }
    }
    match live_direction() {
        None => println!("criterion 9 live judge direction: SKIP (set DPRECON_LIVE_* to run)"),
        Some(Ok(d)) => println!("criterion 9 live judge direction: PASS ({d})"),
        Some(Err(e)) => println!("criterion 9 live judge direction: FAIL ({e})"),
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
