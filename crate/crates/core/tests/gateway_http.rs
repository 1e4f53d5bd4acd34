mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::FakeServer;
use dprecon::attacks::{run_generation_eval, GenerationSettings, DEFAULT_SEPARATOR};
use dprecon::gateway::wire::{validate_request, WireResponse};
use dprecon::gateway::{
    ChatMessage, ChatRequest, Completion, Gateway, GatewayError, HttpTransport, RecordingSleeper,
    ResponseCache, RetryPolicy, Source, Transport, TransportError,
};
use dprecon::pii::{Gazetteer, PiiClass, Tagger};
use dprecon::{Mechanism, SanitizationRecord};

const KEY: &str = "sk-test-0123456789abcdef";

fn ok_reply(req: &common::Recorded) -> (u16, String) {
    let wire = validate_request(&req.body).expect("client sent a valid chat request");
    let last = wire.messages.last().unwrap().content.clone();
    let body = WireResponse::reply(&wire.model, format!("echo: {last}"));
    (200, serde_json::to_string(&body).unwrap())
}

fn request(text: &str) -> ChatRequest {
    ChatRequest::new("m", vec![ChatMessage::user(text)])
}

#[test]
fn http_transport_speaks_the_wire_schema() {
    let server = FakeServer::start(ok_reply);
    let t = HttpTransport::new(&server.base_url, Some(KEY.into()), Duration::from_secs(5));
    let c = t.send(&request("hello").with_temperature(0.7).with_max_tokens(32).with_sample(3)).unwrap();
    assert_eq!(c.content, "echo: hello");

    let rec = &server.recorded()[0];
    assert_eq!((rec.method.as_str(), rec.path.as_str()), ("POST", "/chat/completions"));
    assert_eq!(rec.header("authorization"), Some(format!("Bearer {KEY}").as_str()));
    let body: serde_json::Value = serde_json::from_slice(&rec.body).unwrap();
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["max_tokens"], 32);
    assert_eq!(body["messages"][0]["role"], "user");
    assert!(body.get("sample").is_none(), "cache-only field leaked onto the wire");
}

#[test]
fn transient_http_failures_back_off_then_succeed() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let server = FakeServer::start(move |req| {
        if h.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, r#"{"error":"busy"}"#.into())
        } else {
            ok_reply(req)
        }
    });
    let sleeper = Arc::new(RecordingSleeper::default());
    let gw = Gateway::builder()
        .route("m", Arc::new(HttpTransport::new(&server.base_url, None, Duration::from_secs(5))))
        .retry(RetryPolicy { max_attempts: 5, base_delay_ms: 250, max_delay_ms: 10_000, multiplier: 2.0 })
        .sleeper(sleeper.clone())
        .build();
    let resp = gw.complete_chat(&request("x")).unwrap();
    assert_eq!(resp.content, "echo: x");
    assert_eq!(gw.network_calls(), 3);
    assert_eq!(sleeper.pauses(), [Duration::from_millis(250), Duration::from_millis(500)]);
}

#[test]
fn auth_failure_is_fatal_and_redacted() {
    let server = FakeServer::start(|req| {
        let auth = req.header("authorization").unwrap_or_default().to_string();
        (401, format!(r#"{{"error":"bad key {auth}"}}"#))
    });
    let gw = Gateway::builder()
        .route("m", Arc::new(HttpTransport::new(&server.base_url, Some(KEY.into()), Duration::from_secs(5))))
        .secret(KEY)
        .build();
    let err = gw.complete_chat(&request("x")).unwrap_err();
    assert!(matches!(err, GatewayError::Auth { .. }));
    assert!(!err.to_string().contains(KEY), "{err}");
    assert_eq!(gw.network_calls(), 1);
}

#[test]
fn no_credential_in_cache_files() {
    let server = FakeServer::start(ok_reply);
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::builder()
        .route("m", Arc::new(HttpTransport::new(&server.base_url, Some(KEY.into()), Duration::from_secs(5))))
        .cache(ResponseCache::open(dir.path()).unwrap())
        .secret(KEY)
        .build();
    for i in 0..5 {
        gw.complete_chat(&request(&format!("doc {i}"))).unwrap();
    }
    let mut scanned = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let bytes = std::fs::read(entry.unwrap().path()).unwrap();
        assert!(!String::from_utf8_lossy(&bytes).contains(KEY));
        scanned += 1;
    }
    assert_eq!(scanned, 5);
    let again = gw.complete_chat(&request("doc 0")).unwrap();
    assert_eq!(again.source, Source::Cache);
}

/// Holds each call briefly and tracks the peak number of concurrent calls.
struct Gauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl Transport for Gauge {
    fn send(&self, req: &ChatRequest) -> Result<Completion, TransportError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(15));
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(Completion::text(req.last_user().unwrap_or_default()))
    }
}

#[test]
fn in_flight_requests_are_capped() {
    let gauge = Arc::new(Gauge { current: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
    let gw = Arc::new(Gateway::builder().route("m", gauge.clone()).max_in_flight(8).build());
    let handles: Vec<_> = (0..100)
        .map(|i| {
            let gw = gw.clone();
            thread::spawn(move || gw.complete_chat(&request(&format!("r{i}"))).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(gw.network_calls(), 100);
    assert_eq!(gauge.peak.load(Ordering::SeqCst), 8);
}

#[test]
fn identical_concurrent_requests_are_coalesced() {
    let gauge = Arc::new(Gauge { current: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
    let gw = Arc::new(Gateway::builder().route("m", gauge).build());
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let gw = gw.clone();
            thread::spawn(move || gw.complete_chat(&request("same")).unwrap().content)
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), "same");
    }
    assert!(gw.network_calls() < 16, "{} calls", gw.network_calls());
}

fn record(id: &str, original: &str, sanitized: &str) -> SanitizationRecord {
    SanitizationRecord {
        doc_id: id.into(),
        original: original.into(),
        sanitized: sanitized.into(),
        mechanism: Mechanism::WordLevel,
        budget: 8.0,
        seed: 0,
        timestamp: String::new(),
        word_stats: None,
        decode_stats: None,
        template_hash: None,
        model: None,
    }
}

#[test]
fn generation_eval_over_http() {
    // A generation server that echoes the prompt and then continues with a
    // fixed header, the way a fine-tuned causal model would.
    let server = FakeServer::start(|req| {
        let wire = validate_request(&req.body).unwrap();
        let prompt = &wire.messages.last().unwrap().content;
        let reply = format!("{prompt}From: Steven J Kean To: Jeff Dasovich");
        (200, serde_json::to_string(&WireResponse::reply(&wire.model, reply)).unwrap())
    });
    let gw = Gateway::builder()
        .route("tuned", Arc::new(HttpTransport::new(&server.base_url, None, Duration::from_secs(5))))
        .build();
    let mut gaz = Gazetteer::new();
    gaz.insert(PiiClass::Person, vec!["Steven J Kean".into(), "Jeff Dasovich".into()]);
    let tagger = Tagger::builtin(&gaz);
    let recs = [
        record("a", "From: Steven J Kean To: Jeff Dasovich", "From: Steven J Lane To: Jeff Watson"),
        record("b", "From: Steven J Kean To: Jeff Dasovich", "From: Mary Hill To: Paul Rowe"),
    ];
    let settings = GenerationSettings::new("tuned", DEFAULT_SEPARATOR);
    let out = run_generation_eval(&recs, &gw, &tagger, &settings).unwrap();
    assert!(out.iter().all(|r| r.error.is_none()), "{out:?}");
    assert_eq!(out[0].reconstructed, "From: Steven J Kean To: Jeff Dasovich");
    let m = out[0].metrics.unwrap();
    assert!(m.succ);
    assert_eq!(m.recall, Some(1.0));
    for rec in server.recorded() {
        let wire = validate_request(&rec.body).unwrap();
        assert!(wire.messages[0].content.ends_with(DEFAULT_SEPARATOR));
    }
}

#[test]
fn empty_generation_marks_doc_errored() {
    let server = FakeServer::start(|req| {
        let wire = validate_request(&req.body).unwrap();
        (200, serde_json::to_string(&WireResponse::reply(&wire.model, "")).unwrap())
    });
    let gw = Gateway::builder()
        .route("tuned", Arc::new(HttpTransport::new(&server.base_url, None, Duration::from_secs(5))))
        .build();
    let tagger = Tagger::builtin(&Gazetteer::new());
    let mut settings = GenerationSettings::new("tuned", DEFAULT_SEPARATOR);
    settings.max_error_fraction = 1.0;
    let out = run_generation_eval(&[record("a", "x y", "x z")], &gw, &tagger, &settings).unwrap();
    assert_eq!(out[0].error.as_deref(), Some("empty generation"));
    assert!(out[0].metrics.is_none());
}
