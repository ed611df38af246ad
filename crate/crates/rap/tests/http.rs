mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::{dead_url, MockServer, Reply};
use rap::http::{HttpChatBackend, HttpEmbedder, HttpSettings};
use rap_core::{BackendError, CompletionBackend, CompletionRequest, EmbeddingError, EmbeddingProvider};
use serde_json::json;

fn settings(url: &str) -> HttpSettings {
    let mut s = HttpSettings::new(format!("{url}/chat/completions"), "m1");
    s.timeout = Duration::from_secs(5);
    s.backoff_base = Duration::from_millis(10);
    s
}

/// Sleeper that records waits instead of sleeping.
fn recorder() -> (Arc<Mutex<Vec<Duration>>>, rap::http::Sleeper) {
    let waits = Arc::new(Mutex::new(Vec::new()));
    let w = waits.clone();
    (waits, Arc::new(move |d| w.lock().unwrap().push(d)))
}

#[test]
fn sends_bearer_token_and_chat_schema() {
    let server = MockServer::start(|_, _| Reply::chat("go to desk 1"));
    let backend = HttpChatBackend::new("http-m1", settings(&server.url), Some("sk-test".into()));
    let reply = backend.complete(&CompletionRequest::new("Task: x\n> ")).unwrap();
    assert_eq!(reply, "go to desk 1");
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/chat/completions");
    assert_eq!(reqs[0].header("authorization"), Some("Bearer sk-test"));
    let body = reqs[0].json();
    assert_eq!(body["model"], "m1");
    assert_eq!(body["messages"], json!([{"role": "user", "content": "Task: x\n> "}]));
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 256);
    assert!(body.get("stop").is_none());

    let mut req = CompletionRequest::new("p");
    req.stop = vec!["\n".into()];
    backend.complete(&req).unwrap();
    assert_eq!(server.requests()[1].json()["stop"], json!(["\n"]));
}

#[test]
fn no_token_means_no_authorization_header() {
    let server = MockServer::start(|_, _| Reply::chat("ok"));
    HttpChatBackend::new("b", settings(&server.url), None).complete(&CompletionRequest::new("p")).unwrap();
    assert!(server.requests()[0].header("authorization").is_none());
}

#[test]
fn rate_limit_waits_for_retry_after() {
    let server = MockServer::start(|_, n| if n == 0 { Reply::status(429).header("Retry-After", "2") } else { Reply::chat("fine") });
    let (waits, sleeper) = recorder();
    let backend = HttpChatBackend::new("b", settings(&server.url), None).with_sleeper(sleeper);
    assert_eq!(backend.complete(&CompletionRequest::new("p")).unwrap(), "fine");
    assert_eq!(*waits.lock().unwrap(), [Duration::from_secs(2)]);
    let audit = backend.audit().records();
    assert_eq!(audit.iter().map(|r| (r.attempt, r.status)).collect::<Vec<_>>(), [(0, Some(429)), (1, Some(200))]);
    assert!(audit.iter().all(|r| r.request_id == audit[0].request_id));
}

#[test]
fn retry_after_is_capped() {
    let server = MockServer::start(|_, n| if n == 0 { Reply::status(429).header("retry-after", "600") } else { Reply::chat("ok") });
    let (waits, sleeper) = recorder();
    let mut s = settings(&server.url);
    s.max_retry_wait = Duration::from_secs(3);
    HttpChatBackend::new("b", s, None).with_sleeper(sleeper).complete(&CompletionRequest::new("p")).unwrap();
    assert_eq!(*waits.lock().unwrap(), [Duration::from_secs(3)]);
}

#[test]
fn server_errors_back_off_then_give_up() {
    let server = MockServer::start(|_, _| Reply::status(503));
    let (waits, sleeper) = recorder();
    let backend = HttpChatBackend::new("b", settings(&server.url), None).with_sleeper(sleeper);
    let err = backend.complete(&CompletionRequest::new("p")).unwrap_err();
    assert_eq!(err, BackendError::HttpStatus { status: 503, retry_after_secs: None });
    assert!(!err.is_connectivity());
    assert_eq!(server.requests().len(), 4);
    let ms: Vec<u128> = waits.lock().unwrap().iter().map(Duration::as_millis).collect();
    assert_eq!(ms, [10, 20, 40]);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _| Reply::status(401));
    let backend = HttpChatBackend::new("b", settings(&server.url), None).with_sleeper(Arc::new(|_| {}));
    assert!(matches!(backend.complete(&CompletionRequest::new("p")), Err(BackendError::HttpStatus { status: 401, .. })));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn slow_server_times_out() {
    let server = MockServer::start(|_, _| Reply::chat("late").delayed(Duration::from_millis(800)));
    let mut s = settings(&server.url);
    s.timeout = Duration::from_millis(150);
    s.max_retries = 1;
    let backend = HttpChatBackend::new("b", s, None).with_sleeper(Arc::new(|_| {}));
    let err = backend.complete(&CompletionRequest::new("p")).unwrap_err();
    assert_eq!(err, BackendError::Timeout);
    assert!(err.is_connectivity());
    let audit = backend.audit().records();
    assert_eq!(audit.len(), 2);
    assert!(audit.iter().all(|r| r.status.is_none() && r.error.is_some()));
}

#[test]
fn unreachable_host_is_a_connectivity_failure() {
    let mut s = settings(&dead_url());
    s.max_retries = 0;
    let err = HttpChatBackend::new("b", s, None).complete(&CompletionRequest::new("p")).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)), "{err:?}");
}

#[test]
fn malformed_reply_is_reported() {
    let server = MockServer::start(|_, _| Reply::json(json!({"choices": []})));
    let err = HttpChatBackend::new("b", settings(&server.url), None).complete(&CompletionRequest::new("p")).unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)));
}

#[test]
fn invalid_request_never_leaves_the_process() {
    let server = MockServer::start(|_, _| Reply::chat("x"));
    let mut req = CompletionRequest::new("p");
    req.max_tokens = 0;
    assert!(HttpChatBackend::new("b", settings(&server.url), None).complete(&req).is_err());
    assert!(server.requests().is_empty());
}

#[test]
fn in_flight_requests_are_bounded() {
    let server = MockServer::start(|_, _| Reply::chat("ok").delayed(Duration::from_millis(120)));
    let mut s = settings(&server.url);
    s.max_in_flight = 2;
    let backend = HttpChatBackend::new("b", s, None);
    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| backend.complete(&CompletionRequest::new("p")).unwrap());
        }
    });
    assert_eq!(server.requests().len(), 8);
    assert_eq!(server.peak.load(std::sync::atomic::Ordering::SeqCst), 2);
}

#[test]
fn audit_log_round_trips_as_jsonl() {
    let server = MockServer::start(|_, n| if n % 2 == 0 { Reply::status(500) } else { Reply::chat("ok") });
    let backend = HttpChatBackend::new("b", settings(&server.url), None).with_sleeper(Arc::new(|_| {}));
    backend.complete(&CompletionRequest::new("abc")).unwrap();
    backend.complete(&CompletionRequest::new("defg")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    backend.audit().write_jsonl(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<rap::http::AuditRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows, backend.audit().records());
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.request_chars).collect::<Vec<_>>(), [3, 3, 4, 4]);
    assert_ne!(rows[0].request_id, rows[2].request_id);
}

#[test]
fn remote_embedder() {
    let server = MockServer::start(|req, _| {
        let n = req.json()["input"].as_array().unwrap().len();
        let data: Vec<_> = (0..n).map(|i| json!({"embedding": [1.0, i as f64, 0.0]})).collect();
        Reply::json(json!({"data": data}))
    });
    let mut s = settings(&server.url);
    s.url = format!("{}/embeddings", server.url);
    let e = HttpEmbedder::new(s.clone(), 3, Some("k".into()));
    assert_eq!(e.dim(), 3);
    assert_eq!(e.provider_id(), "http-m1-d3");
    assert_eq!(e.embed("mug").unwrap().values(), &[1.0, 0.0, 0.0]);
    let batch = e.embed_batch(&["a", "b"]).unwrap();
    assert_eq!(batch[1].values(), &[1.0, 1.0, 0.0]);
    let req = &server.requests()[0];
    assert_eq!(req.path, "/embeddings");
    assert_eq!(req.header("authorization"), Some("Bearer k"));
    assert_eq!(req.json(), json!({"model": "m1", "input": ["mug"]}));
    assert_eq!(e.embed("  "), Err(EmbeddingError::EmptyInput));

    let wrong = HttpEmbedder::new(s, 4, None);
    assert!(matches!(wrong.embed("mug"), Err(EmbeddingError::DimensionMismatch { .. })));
}
