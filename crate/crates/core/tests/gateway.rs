mod common;

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{completion_body, transcript, StubServer};
use msr_core::gateway::{
    request_key, Backend, CompletionRequest, Gateway, GatewayError, GenerationParams, LiveBackend, ResponseCache,
    RetryPolicy, VerbatimBackend,
};

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 5,
        base_delay: Duration::from_millis(2),
        max_delay: Duration::from_millis(10),
    }
}

fn live(server: &StubServer, key: Option<&str>) -> Arc<dyn Backend> {
    Arc::new(LiveBackend::new(&server.base_url, key.map(str::to_string), Duration::from_secs(5)).unwrap())
}

fn params() -> GenerationParams {
    GenerationParams {
        model: "gpt-3.5-turbo-1106".into(),
        temperature: 0.1,
        max_tokens: None,
        seed: Some(99),
    }
}

#[test]
fn live_request_matches_wire_protocol() {
    let server = StubServer::start(|_, _| (200, completion_body("generated words here")));
    let gw = Gateway::new(live(&server, Some("sk-test")), Arc::new(ResponseCache::in_memory()));
    let tr = transcript(0, 60);
    let record = gw.generate(&tr, &params()).unwrap();
    assert_eq!(record.output_text, "generated words here");
    assert_eq!(record.backend_name, "live");
    assert_eq!(record.params.seed, None);
    assert_eq!(record.params.max_tokens, Some(15));

    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    let req = &reqs[0];
    assert_eq!(req.method, "POST");
    assert_eq!(req.path, "/v1/chat/completions");
    assert_eq!(req.authorization.as_deref(), Some("Bearer sk-test"));
    let body = &req.body;
    assert_eq!(body["model"], "gpt-3.5-turbo-1106");
    assert_eq!(body["temperature"], 0.1);
    assert_eq!(body["max_tokens"], 15);
    let messages = body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 6);
    let roles: Vec<&str> = messages.iter().map(|m| m["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["system", "user", "assistant", "user", "assistant", "user"]);
    assert_eq!(messages[0]["content"], "complete the paragraph");
    assert_eq!(messages[1]["content"], tr.turns[0].text.as_str());
    assert!(messages.iter().all(|m| m["content"] != tr.reference_text.as_str()));
    let mut keys: Vec<_> = body.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["max_tokens", "messages", "model", "temperature"]);
}

#[test]
fn transient_errors_are_retried() {
    let server = StubServer::start(|i, _| match i {
        0 => (503, "{}".into()),
        1 => (429, "{}".into()),
        _ => (200, completion_body("third time")),
    });
    let gw = Gateway::new(live(&server, Some("k")), Arc::new(ResponseCache::in_memory())).with_retry(fast_retry());
    let record = gw.generate(&transcript(1, 30), &params()).unwrap();
    assert_eq!(record.output_text, "third time");
    assert_eq!(server.request_count(), 3);
    assert_eq!(gw.requests_issued(), 3);
}

#[test]
fn client_errors_surface_immediately() {
    let server = StubServer::start(|_, _| (400, r#"{"error":"bad request"}"#.into()));
    let gw = Gateway::new(live(&server, Some("k")), Arc::new(ResponseCache::in_memory())).with_retry(fast_retry());
    let err = gw.generate(&transcript(2, 30), &params()).unwrap_err();
    assert!(matches!(err, GatewayError::Status { code: 400, .. }));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn retry_budget_exhaustion() {
    let server = StubServer::start(|_, _| (500, "{}".into()));
    let gw = Gateway::new(live(&server, Some("k")), Arc::new(ResponseCache::in_memory())).with_retry(fast_retry());
    let err = gw.generate(&transcript(3, 30), &params()).unwrap_err();
    assert!(matches!(err, GatewayError::RetriesExhausted { attempts: 5, .. }));
    assert_eq!(server.request_count(), 5);
}

#[test]
fn malformed_and_empty_responses() {
    let server = StubServer::start(|i, _| match i {
        0 => (200, "not json".into()),
        _ => (200, completion_body("   ")),
    });
    let cache = Arc::new(ResponseCache::in_memory());
    let gw = Gateway::new(live(&server, Some("k")), cache.clone()).with_retry(fast_retry());
    assert!(matches!(
        gw.generate(&transcript(4, 30), &params()),
        Err(GatewayError::MalformedResponse(_))
    ));
    assert_eq!(gw.generate(&transcript(5, 30), &params()), Err(GatewayError::EmptyCompletion));
    assert!(cache.is_empty());
}

#[test]
fn unreachable_server_is_transient() {
    let backend: Arc<dyn Backend> =
        Arc::new(LiveBackend::new("http://127.0.0.1:1/v1", Some("k".into()), Duration::from_millis(200)).unwrap());
    let gw = Gateway::new(backend, Arc::new(ResponseCache::in_memory())).with_retry(RetryPolicy {
        max_attempts: 2,
        ..fast_retry()
    });
    let err = gw.generate(&transcript(6, 30), &params()).unwrap_err();
    assert!(matches!(err, GatewayError::RetriesExhausted { attempts: 2, .. }), "{err:?}");
}

#[test]
fn warm_cache_needs_no_network_or_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let server = StubServer::start(|i, _| (200, completion_body(&format!("answer {i}"))));
    let transcripts: Vec<_> = (0..5).map(|i| transcript(i, 40)).collect();
    let first: Vec<_> = {
        let gw = Gateway::new(live(&server, Some("k")), Arc::new(ResponseCache::open(&path).unwrap()));
        gw.generate_batch(&transcripts, &params(), 2).into_iter().map(Result::unwrap).collect()
    };
    assert_eq!(server.request_count(), 5);

    let keyless: Arc<dyn Backend> =
        Arc::new(LiveBackend::new("http://127.0.0.1:1/v1", None, Duration::from_millis(100)).unwrap());
    let gw = Gateway::new(keyless, Arc::new(ResponseCache::open(&path).unwrap()));
    let second: Vec<_> = gw
        .generate_batch(&transcripts, &params(), 2)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    assert_eq!(gw.requests_issued(), 0);
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.output_text, b.output_text);
        assert_eq!(a.request_key, b.request_key);
        assert!(b.cached);
    }

    let cold = transcript(77, 40);
    assert!(matches!(gw.generate(&cold, &params()), Err(GatewayError::Unavailable(_))));
}

/// Counts calls and tracks the peak number of overlapping calls.
struct ProbeBackend {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    fail_doc: Option<String>,
}

impl ProbeBackend {
    fn new(fail_doc: Option<&str>) -> Self {
        Self {
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            fail_doc: fail_doc.map(str::to_string),
        }
    }
}

impl Backend for ProbeBackend {
    fn name(&self) -> String {
        "probe".into()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(15));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if self.fail_doc.as_deref() == Some(request.transcript.doc_id.as_str()) {
            return Err(GatewayError::Timeout);
        }
        Ok(format!("echo {}", request.transcript.doc_id))
    }
}

#[test]
fn batch_skips_cached_entries() {
    let probe = Arc::new(ProbeBackend::new(None));
    let gw = Gateway::new(probe.clone(), Arc::new(ResponseCache::in_memory()));
    let transcripts: Vec<_> = (0..10).map(|i| transcript(i, 30)).collect();
    for tr in &transcripts[..4] {
        gw.generate(tr, &params()).unwrap();
    }
    assert_eq!(probe.calls.load(Ordering::SeqCst), 4);
    let results = gw.generate_batch(&transcripts, &params(), 3);
    assert_eq!(probe.calls.load(Ordering::SeqCst), 10, "exactly 6 new requests");
    for (tr, r) in transcripts.iter().zip(&results) {
        let r = r.as_ref().unwrap();
        assert_eq!(r.doc_id, tr.doc_id);
        assert_eq!(r.output_text, format!("echo {}", tr.doc_id));
    }
}

#[test]
fn in_flight_bound_is_respected() {
    let transcripts: Vec<_> = (0..12).map(|i| transcript(i, 30)).collect();

    let serial = Arc::new(ProbeBackend::new(None));
    let gw = Gateway::new(serial.clone(), Arc::new(ResponseCache::in_memory()));
    assert!(gw.generate_batch(&transcripts, &params(), 1).iter().all(Result::is_ok));
    assert_eq!(serial.peak.load(Ordering::SeqCst), 1);

    let bounded = Arc::new(ProbeBackend::new(None));
    let gw = Gateway::new(bounded.clone(), Arc::new(ResponseCache::in_memory()));
    let results = gw.generate_batch(&transcripts, &params(), 3);
    assert_eq!(results.len(), 12);
    let peak = bounded.peak.load(Ordering::SeqCst);
    assert!((2..=3).contains(&peak), "peak in flight {peak}");
}

#[test]
fn one_failure_does_not_abort_batch() {
    let probe = Arc::new(ProbeBackend::new(Some("doc7")));
    let gw = Gateway::new(probe.clone(), Arc::new(ResponseCache::in_memory())).with_retry(fast_retry());
    let transcripts: Vec<_> = (0..10).map(|i| transcript(i, 30)).collect();
    let results = gw.generate_batch(&transcripts, &params(), 4);
    let failures: Vec<usize> = results.iter().enumerate().filter(|(_, r)| r.is_err()).map(|(i, _)| i).collect();
    assert_eq!(failures, [7]);
    assert!(matches!(results[7], Err(GatewayError::RetriesExhausted { attempts: 5, .. })));
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 9);
}

#[test]
fn request_keys_are_distinct_per_transcript() {
    let keys: HashSet<String> = (0..50)
        .map(|i| request_key(&VerbatimBackend, &transcript(i, 30), &params()))
        .collect();
    assert_eq!(keys.len(), 50);
}
