use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use cotsrf_core::collect::{
    collect_benign, collect_role, collect_source, collect_suspect, collect_to_file, CellRequest, ChatEndpoint,
    CollectError, CollectOptions, CorpusRole, EndpointConfig, EndpointError, HttpEndpoint, ResponseCorpus,
    RetryPolicy,
};
use cotsrf_core::corpus::{build_query_set, synthetic_questions, QuerySet, DEFAULT_COT_PROMPT};
use cotsrf_core::stylesim::{default_profile, serve, SimEndpoint};

fn queries(n: usize) -> QuerySet {
    build_query_set(&synthetic_questions(n, 31), DEFAULT_COT_PROMPT, n, 31).unwrap()
}

fn fast() -> CollectOptions {
    CollectOptions {
        parallelism: 4,
        retry: RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
        },
        allow_few_samples: false,
    }
}

fn texts(c: &ResponseCorpus) -> Vec<(String, u32, String)> {
    c.records
        .iter()
        .map(|r| (r.query_id.clone(), r.sample_index, r.text.clone()))
        .collect()
}

/// Wraps a simulator with scripted failures.
struct Scripted {
    sim: SimEndpoint,
    /// Fail this many leading attempts per cell with a retryable 503.
    transient: usize,
    /// Cells that always fail with a non-retryable 400.
    broken: Vec<(String, u32)>,
    /// Cells that always come back empty.
    empty: Vec<(String, u32)>,
    attempts: Mutex<HashMap<(String, u32), usize>>,
    calls: AtomicUsize,
}

impl Scripted {
    fn new(sim: SimEndpoint) -> Self {
        Self {
            sim,
            transient: 0,
            broken: Vec::new(),
            empty: Vec::new(),
            attempts: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }
}

impl ChatEndpoint for Scripted {
    fn model_id(&self) -> &str {
        self.sim.model_id()
    }

    fn advertised_temperature(&self) -> f64 {
        self.sim.temperature()
    }

    async fn complete(&self, req: &CellRequest<'_>) -> Result<String, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = (req.query_id.to_string(), req.sample_index);
        let n = {
            let mut a = self.attempts.lock().unwrap();
            let n = a.entry(key.clone()).or_insert(0);
            *n += 1;
            *n
        };
        if self.broken.contains(&key) {
            return Err(EndpointError::Status {
                status: 400,
                body: "bad".into(),
            });
        }
        if self.empty.contains(&key) {
            return Ok(String::new());
        }
        if n <= self.transient {
            return Err(EndpointError::Status {
                status: 503,
                body: "busy".into(),
            });
        }
        self.sim
            .generate_raw(req.query_id, req.prompt, req.sample_index, req.temperature)
            .map_err(|e| EndpointError::Protocol(e.to_string()))
    }
}

fn sim(id: &str, t: f64) -> SimEndpoint {
    SimEndpoint::new(default_profile(id).unwrap(), t).unwrap()
}

#[tokio::test]
async fn http_collection_matches_in_process_simulation() {
    let qs = queries(6);
    let server = serve(sim("aurora", 1.5), "127.0.0.1:0").await.unwrap();
    let ep = HttpEndpoint::new(EndpointConfig::new("aurora", server.base_url())).unwrap();

    let over_wire = collect_source(&ep, &qs, 4, 1.5, &fast()).await.unwrap();
    over_wire.validate().unwrap();
    assert_eq!(over_wire.records.len(), 24);
    let local = sim("aurora", 1.5).simulate_corpus(&qs, CorpusRole::Source, 4);
    assert_eq!(texts(&over_wire), texts(&local));
    assert_eq!(over_wire.content_hash(), local.content_hash());
    assert_eq!(server.request_count(), 24);
    server.shutdown().await;
}

#[tokio::test]
async fn suspect_collection_uses_endpoint_temperature() {
    let qs = queries(5);
    let server = serve(sim("basalt", 0.7), "127.0.0.1:0").await.unwrap();
    let mut cfg = EndpointConfig::new("basalt", server.base_url());
    cfg.temperature = 0.7;
    let ep = HttpEndpoint::new(cfg).unwrap();
    let c = collect_suspect(&ep, &qs, &fast()).await.unwrap();
    assert_eq!(c.samples_per_query(), 1);
    assert_eq!(c.header.temperature, 0.7);
    let local = sim("basalt", 0.7).simulate_corpus(&qs, CorpusRole::Suspect, 1);
    assert_eq!(texts(&c), texts(&local));
}

#[tokio::test]
async fn source_needs_more_than_three_samples() {
    let qs = queries(3);
    let ep = Scripted::new(sim("aurora", 1.5));
    assert!(matches!(
        collect_source(&ep, &qs, 3, 1.5, &fast()).await,
        Err(CollectError::TooFewSamples(3))
    ));
    let lenient = CollectOptions {
        allow_few_samples: true,
        ..fast()
    };
    assert!(collect_source(&ep, &qs, 3, 1.5, &lenient).await.is_ok());
}

#[tokio::test]
async fn transient_errors_are_retried() {
    let qs = queries(4);
    let mut ep = Scripted::new(sim("aurora", 1.5));
    ep.transient = 2;
    let c = collect_source(&ep, &qs, 4, 1.5, &fast()).await.unwrap();
    assert_eq!(c.records.len(), 16);
    assert_eq!(ep.calls.load(Ordering::SeqCst), 16 * 3);

    let mut worse = Scripted::new(sim("aurora", 1.5));
    worse.transient = 3;
    match collect_source(&worse, &qs, 4, 1.5, &fast()).await {
        Err(CollectError::Incomplete { failures, partial }) => {
            assert_eq!(failures.len(), 16);
            assert!(partial.records.is_empty());
        }
        other => panic!("expected Incomplete, got {other:?}"),
    }
}

#[tokio::test]
async fn empty_responses_become_error_rows_after_one_retry() {
    let qs = queries(4);
    let q = qs.queries[1].id.clone();
    let mut ep = Scripted::new(sim("cobalt", 1.0));
    ep.empty = vec![(q.clone(), 1)];
    let c = collect_suspect(&ep, &qs, &fast()).await.unwrap();
    let row = c.cell(&q, 1).unwrap();
    assert!(row.is_error());
    assert_eq!(c.error_rows(), 1);
    assert!(c.text(&q, 1).is_none());
    assert_eq!(ep.attempts.lock().unwrap()[&(q, 1)], 2);
}

#[tokio::test]
async fn one_failing_benign_endpoint_does_not_sink_the_others() {
    let qs = queries(4);
    let good = Scripted::new(sim("basalt", 1.5));
    let mut bad = Scripted::new(sim("cobalt", 1.5));
    bad.broken = vec![(qs.queries[0].id.clone(), 2)];
    let results = collect_benign(&[good, bad], &qs, 4, 1.5, &fast()).await.unwrap();
    assert!(results[0].is_ok());
    match &results[1] {
        Err(CollectError::Incomplete { failures, partial }) => {
            assert_eq!(failures.len(), 1);
            assert_eq!(partial.records.len(), 15);
        }
        other => panic!("expected Incomplete, got {other:?}"),
    }
    let none: [Scripted; 0] = [];
    assert!(matches!(collect_benign(&none, &qs, 4, 1.5, &fast()).await, Err(CollectError::NoEndpoints)));
}

#[tokio::test]
async fn interrupted_collection_resumes_missing_cells_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("source.jsonl");
    let qs = queries(5);
    let broken_cell = (qs.queries[2].id.clone(), 3);

    let mut first = Scripted::new(sim("aurora", 1.5));
    first.broken = vec![broken_cell.clone()];
    let err = collect_to_file(&first, &qs, CorpusRole::Source, 4, Some(1.5), &fast(), &out, false).await;
    assert!(matches!(err, Err(CollectError::Incomplete { .. })));
    assert!(!out.exists());
    let journal = dir.path().join("source.jsonl.partial");
    assert!(journal.exists());

    let second = Scripted::new(sim("aurora", 1.5));
    let path = collect_to_file(&second, &qs, CorpusRole::Source, 4, Some(1.5), &fast(), &out, true)
        .await
        .unwrap();
    assert_eq!(path, out);
    assert!(!journal.exists());
    assert_eq!(second.calls.load(Ordering::SeqCst), 1);
    let c = ResponseCorpus::read(&out).unwrap();
    c.validate().unwrap();
    let local = sim("aurora", 1.5).simulate_corpus(&qs, CorpusRole::Source, 4);
    assert_eq!(texts(&c), texts(&local));

    // A finished corpus is left alone; a fresh run goes to a versioned path.
    let third = Scripted::new(sim("aurora", 1.5));
    let again = collect_to_file(&third, &qs, CorpusRole::Source, 4, Some(1.5), &fast(), &out, true)
        .await
        .unwrap();
    assert_eq!(again, out);
    assert_eq!(third.calls.load(Ordering::SeqCst), 0);
    let v2 = collect_to_file(&third, &qs, CorpusRole::Source, 4, Some(1.5), &fast(), &out, false)
        .await
        .unwrap();
    assert_eq!(v2, dir.path().join("source.v2.jsonl"));
    assert_eq!(ResponseCorpus::read(&v2).unwrap().content_hash(), c.content_hash());
}

#[tokio::test]
async fn resume_rejects_a_different_query_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.jsonl");
    let mut ep = Scripted::new(sim("aurora", 1.5));
    ep.broken = vec![(queries(4).queries[0].id.clone(), 1)];
    let _ = collect_to_file(&ep, &queries(4), CorpusRole::Source, 4, Some(1.5), &fast(), &out, false).await;
    let other = build_query_set(&synthetic_questions(9, 2), DEFAULT_COT_PROMPT, 4, 2).unwrap();
    let res = collect_to_file(&ep, &other, CorpusRole::Source, 4, Some(1.5), &fast(), &out, true).await;
    assert!(matches!(res, Err(CollectError::QuerySetMismatch)));
}

#[tokio::test]
async fn corpus_file_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let qs = queries(3);
    let mut ep = Scripted::new(sim("ember", 1.2));
    ep.empty = vec![(qs.queries[0].id.clone(), 2)];
    let c = collect_role(&ep, &qs, CorpusRole::Benign, 4, Some(1.2), &fast(), Vec::new(), |_| {})
        .await
        .unwrap();
    let path = dir.path().join("b.jsonl");
    c.write(&path).unwrap();
    let back = ResponseCorpus::read(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.content_hash(), c.content_hash());
}

#[tokio::test]
async fn server_rejects_malformed_requests() {
    let server = serve(sim("aurora", 1.0), "127.0.0.1:0").await.unwrap();
    let url = format!("{}/v1/chat/completions", server.base_url());
    let client = reqwest::Client::new();
    let bad = client.post(&url).body("not json").send().await.unwrap();
    assert_eq!(bad.status().as_u16(), 400);
    let no_user = client
        .post(&url)
        .json(&serde_json::json!({"model": "x", "messages": []}))
        .send()
        .await
        .unwrap();
    assert_eq!(no_user.status().as_u16(), 400);
    let body: serde_json::Value = no_user.json().await.unwrap();
    assert!(body["error"]["message"].is_string());
    let hot = client
        .post(&url)
        .json(&serde_json::json!({"model": "x", "messages": [{"role": "user", "content": "q"}], "temperature": -1.0}))
        .send()
        .await
        .unwrap();
    assert_eq!(hot.status().as_u16(), 400);
}

#[tokio::test]
async fn transport_failure_is_reported() {
    // Nothing listens on this port once the server is gone.
    let server = serve(sim("aurora", 1.0), "127.0.0.1:0").await.unwrap();
    let base = server.base_url();
    server.shutdown().await;
    let mut cfg = EndpointConfig::new("gone", base);
    cfg.timeout_secs = 2.0;
    let ep = HttpEndpoint::new(cfg).unwrap();
    let opts = CollectOptions {
        retry: RetryPolicy {
            max_attempts: 2,
            base_delay: Duration::from_millis(1),
        },
        ..fast()
    };
    match collect_suspect(&ep, &queries(2), &opts).await {
        Err(CollectError::Incomplete { failures, .. }) => assert_eq!(failures.len(), 2),
        other => panic!("expected Incomplete, got {other:?}"),
    }
}
