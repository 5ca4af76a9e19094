use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use proptest::prelude::*;
use serde_json::{json, Value};

use tog_core::annotation::{Precision, Source};
use tog_core::geometry::YawPitch;
use tog_core::grid::PoseSample;
use tog_llm::*;

type Reply = (u16, String);
type Responder = dyn Fn(&str, usize) -> Reply + Send + Sync;

struct Mock {
    respond: Box<Responder>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    per_prompt: Mutex<HashMap<String, usize>>,
}

fn chat_body(content: &str) -> String {
    json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

async fn handle(State(m): State<Arc<Mock>>, Json(body): Json<Value>) -> (StatusCode, String) {
    let now = m.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    m.max_in_flight.fetch_max(now, Ordering::SeqCst);
    m.calls.fetch_add(1, Ordering::SeqCst);
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default().to_string();
    let nth = {
        let mut seen = m.per_prompt.lock().unwrap();
        let c = seen.entry(prompt.clone()).or_default();
        *c += 1;
        *c
    };
    tokio::time::sleep(m.delay).await;
    let (status, text) = (m.respond)(&prompt, nth);
    m.in_flight.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::from_u16(status).unwrap(), text)
}

async fn serve(delay: Duration, respond: impl Fn(&str, usize) -> Reply + Send + Sync + 'static) -> (String, Arc<Mock>) {
    let mock = Arc::new(Mock {
        respond: Box::new(respond),
        delay,
        calls: AtomicUsize::new(0),
        in_flight: AtomicUsize::new(0),
        max_in_flight: AtomicUsize::new(0),
        per_prompt: Mutex::new(HashMap::new()),
    });
    let app = Router::new().route("/v1/chat/completions", post(handle)).with_state(Arc::clone(&mock));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), mock)
}

fn client(endpoint: String, max_in_flight: usize) -> Arc<LlmClient> {
    let cfg = LlmConfig { endpoint, backoff_base_ms: 5, max_in_flight, max_attempts: 3, ..Default::default() };
    Arc::new(LlmClient::with_key(cfg, "test-key".into()).unwrap())
}

fn sample(id: u32, head_yaw: f64) -> PoseSample {
    let head = YawPitch::new(head_yaw, 0.0);
    let eye = YawPitch::new(10.0, 0.0);
    PoseSample { id, head, eye, gaze: YawPitch::new(head_yaw + 10.0, 0.0) }
}

fn well_formed(prompt: &str) -> String {
    if prompt.contains("within 10 words") {
        chat_body("The person looks slightly left.")
    } else {
        chat_body("1. First description.\n2. Second description.\n3. Third description.")
    }
}

#[tokio::test]
async fn passes_fixture_content_through() {
    let (url, mock) = serve(Duration::ZERO, |_, _| (200, chat_body("fixture reply"))).await;
    let out = client(url, 2).send_chat_request("hello").await.unwrap();
    assert_eq!(out, ChatOutcome { content: "fixture reply".into(), attempts: 1 });
    assert_eq!(mock.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn retries_rate_limit_then_succeeds() {
    let (url, mock) = serve(Duration::ZERO, |_, nth| if nth == 1 { (429, "slow down".into()) } else { (200, chat_body("ok")) }).await;
    let out = client(url, 2).send_chat_request("hello").await.unwrap();
    assert_eq!(out.attempts, 2);
    assert_eq!(mock.calls.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn does_not_retry_client_errors() {
    let (url, mock) = serve(Duration::ZERO, |_, _| (400, "bad request".into())).await;
    let err = client(url, 2).send_chat_request("hello").await.unwrap_err();
    assert!(matches!(err, LlmError::Protocol { status: Some(400), .. }), "{err}");
    assert_eq!(mock.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn gives_up_after_max_attempts_on_server_errors() {
    let (url, mock) = serve(Duration::ZERO, |_, _| (503, "unavailable".into())).await;
    let err = client(url, 2).send_chat_request("hello").await.unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn non_json_success_is_protocol_error() {
    let (url, _) = serve(Duration::ZERO, |_, _| (200, "not json".into())).await;
    let err = client(url, 1).send_chat_request("hello").await.unwrap_err();
    assert!(matches!(err, LlmError::Protocol { status: None, .. }));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn in_flight_requests_are_bounded() {
    let (url, mock) = serve(Duration::from_millis(30), |_, _| (200, chat_body("ok"))).await;
    let c = client(url, 3);
    let mut set = tokio::task::JoinSet::new();
    for i in 0..20 {
        let c = Arc::clone(&c);
        set.spawn(async move { c.send_chat_request(&format!("prompt {i}")).await });
    }
    while let Some(r) = set.join_next().await {
        r.unwrap().unwrap();
    }
    let max = mock.max_in_flight.load(Ordering::SeqCst);
    assert!(max <= 3, "observed {max} concurrent requests");
    assert!(max >= 2, "requests never overlapped");
}

#[tokio::test]
async fn two_samples_yield_eight_records() {
    let (url, _) = serve(Duration::ZERO, |p, _| (200, well_formed(p))).await;
    let out = annotate_batch(client(url, 4), &[sample(7, 20.0), sample(3, -20.0)], "The person").await.unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.records.len(), 8);
    let ids: Vec<u32> = out.records.iter().map(|r| r.sample_id).collect();
    assert_eq!(ids, [3, 3, 3, 3, 7, 7, 7, 7]);
    assert!(out.records.iter().all(|r| r.source == Source::Llm));
    let low: Vec<_> = out.records.iter().filter(|r| r.precision == Precision::Low).collect();
    assert_eq!(low.len(), 2);
    assert_eq!(out.records[1].text, "First description.");
    assert_eq!(out.records[3].variant, 2);
}

#[tokio::test]
async fn permanently_failing_sample_is_reported() {
    let (url, _) = serve(Duration::ZERO, |p, _| {
        if p.contains("Head yaw: -20") {
            (400, "rejected".into())
        } else {
            (200, well_formed(p))
        }
    })
    .await;
    let out = annotate_batch(client(url, 4), &[sample(1, 20.0), sample(2, -20.0)], "The person").await.unwrap();
    assert_eq!(out.records.len(), 4);
    assert!(out.records.iter().all(|r| r.sample_id == 1));
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].sample_id, 2);
}

#[tokio::test]
async fn malformed_reply_is_requested_once_more() {
    let (url, mock) = serve(Duration::ZERO, |p, _| {
        if p.contains("within 10 words") {
            (200, well_formed(p))
        } else {
            (200, chat_body("1. Only one.\n2. Only two."))
        }
    })
    .await;
    let c = client(url, 4);
    let err = annotate_batch(Arc::clone(&c), &[sample(5, 0.0)], "The person").await.unwrap_err();
    let LlmError::AllFailed(failures) = err else { panic!("expected aggregate failure") };
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].precision, Precision::High);
    assert!(failures[0].reason.contains("expected 3"), "{}", failures[0].reason);
    // one low request, one high request and one re-request
    assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
    assert_eq!(c.attempts_made(), 3);
}

#[tokio::test]
async fn empty_batch_is_config_error() {
    let c = client("http://127.0.0.1:9/unused".into(), 1);
    assert!(matches!(annotate_batch(c, &[], "The person").await, Err(LlmError::Config(_))));
}

proptest! {
    #[test]
    fn backoff_never_decreases(base in 1u64..2000, jitters in prop::collection::vec(0.0f64..1.0, 1..12)) {
        let delays: Vec<Duration> = jitters.iter().enumerate().map(|(k, &u)| backoff_delay(base, k as u32, u)).collect();
        for w in delays.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for (k, d) in delays.iter().enumerate() {
            let nominal = base as f64 * 2f64.powi(k as i32) / 1000.0;
            prop_assert!(d.as_secs_f64() >= nominal - 1e-9);
            prop_assert!(d.as_secs_f64() < 1.5 * nominal + 1e-9);
        }
    }
}
