//! Read-only monitoring service: an authenticated HTTP status page plus
//! JSON endpoints for state, recent events and the latest processed frame.
//!
//! The pipeline is the single writer of [`MonitorState`]; request handlers
//! only read, so serving never blocks frame processing.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alert::Severity;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("cannot bind monitor service: {0}")]
    BindFailure(String),
    #[error("invalid monitor config: {0}")]
    InvalidConfig(String),
}

/// Basic-auth credentials holding a salted SHA-256 digest of the password;
/// the plaintext is dropped on construction.
#[derive(Debug, Clone)]
pub struct Credentials {
    username: String,
    salt: [u8; 16],
    password_hash: [u8; 32],
}

impl Credentials {
    pub fn new(username: &str, password: &str) -> Self {
        let salt: [u8; 16] = rand::random();
        Credentials {
            username: username.to_string(),
            salt,
            password_hash: Self::digest(&salt, password),
        }
    }

    fn digest(salt: &[u8; 16], password: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(password.as_bytes());
        h.finalize().into()
    }

    /// Verify a username/password pair. The hash comparison runs in
    /// constant time; the username check is an early filter on public data.
    pub fn verify(&self, username: &str, password: &str) -> bool {
        let name_ok = username == self.username;
        let hash = Self::digest(&self.salt, password);
        name_ok & constant_time_eq(&hash, &self.password_hash)
    }
}

/// Branch-free byte-slice equality: XOR-accumulate every byte pair.
fn constant_time_eq(a: &[u8; 32], b: &[u8; 32]) -> bool {
    let mut acc = 0u8;
    for (x, y) in a.iter().zip(b.iter()) {
        acc |= x ^ y;
    }
    acc == 0
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    /// `host:port` to listen on.
    pub bind_address: String,
    pub credentials: Credentials,
    pub page_title: String,
    pub max_event_history: usize,
}

/// Coarse pipeline health shown on the status page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PipelineState {
    Idle,
    Running,
    Degraded,
}

/// Compact event summary embedded in status responses.
#[derive(Debug, Clone, Serialize)]
pub struct EventSummary {
    pub event_id: u64,
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub severity: Severity,
    pub flow_count: usize,
}

/// Point-in-time view served by `/api/status`.
#[derive(Debug, Clone, Serialize)]
pub struct StatusSnapshot {
    pub uptime_s: u64,
    pub frames_processed: u64,
    pub events_total: u64,
    pub last_event: Option<EventSummary>,
    pub current_fps: f64,
    pub pipeline_state: PipelineState,
}

/// Shared pipeline→monitor state: one writer (the pipeline), many readers
/// (request handlers).
#[derive(Debug)]
pub struct MonitorState {
    started: Instant,
    frames_processed: AtomicU64,
    events_total: AtomicU64,
    /// f64 bit pattern, updated atomically.
    current_fps: AtomicU64,
    pipeline_state: Mutex<PipelineState>,
    last_event: Mutex<Option<EventSummary>>,
    /// Raw serialized event payloads, oldest first, capped at the history limit.
    events: Mutex<VecDeque<String>>,
    max_event_history: usize,
    latest_frame_png: Mutex<Option<Vec<u8>>>,
}

impl MonitorState {
    pub fn new(max_event_history: usize) -> Self {
        MonitorState {
            started: Instant::now(),
            frames_processed: AtomicU64::new(0),
            events_total: AtomicU64::new(0),
            current_fps: AtomicU64::new(0f64.to_bits()),
            pipeline_state: Mutex::new(PipelineState::Idle),
            last_event: Mutex::new(None),
            events: Mutex::new(VecDeque::new()),
            max_event_history: max_event_history.max(1),
            latest_frame_png: Mutex::new(None),
        }
    }

    pub fn record_frame(&self, fps: f64) {
        self.frames_processed.fetch_add(1, Ordering::Relaxed);
        self.current_fps.store(fps.to_bits(), Ordering::Relaxed);
    }

    pub fn set_pipeline_state(&self, s: PipelineState) {
        *self.pipeline_state.lock().unwrap() = s;
    }

    pub fn set_latest_frame_png(&self, png: Vec<u8>) {
        *self.latest_frame_png.lock().unwrap() = Some(png);
    }

    /// Store a dispatched event: the exact payload bytes plus a summary.
    /// History is a ring capped at `max_event_history`.
    pub fn record_event(&self, payload_json: String, summary: EventSummary) {
        self.events_total.fetch_add(1, Ordering::Relaxed);
        *self.last_event.lock().unwrap() = Some(summary);
        let mut events = self.events.lock().unwrap();
        events.push_back(payload_json);
        while events.len() > self.max_event_history {
            events.pop_front();
        }
    }

    pub fn snapshot(&self) -> StatusSnapshot {
        StatusSnapshot {
            uptime_s: self.started.elapsed().as_secs(),
            frames_processed: self.frames_processed.load(Ordering::Relaxed),
            events_total: self.events_total.load(Ordering::Relaxed),
            last_event: self.last_event.lock().unwrap().clone(),
            current_fps: f64::from_bits(self.current_fps.load(Ordering::Relaxed)),
            pipeline_state: *self.pipeline_state.lock().unwrap(),
        }
    }

    /// Most recent `limit` raw payloads, newest first.
    pub fn recent_events(&self, limit: usize) -> Vec<String> {
        let events = self.events.lock().unwrap();
        events.iter().rev().take(limit).cloned().collect()
    }
}

struct ServerCtx {
    state: Arc<MonitorState>,
    credentials: Credentials,
    page_title: String,
}

/// Handle to a running monitor service; dropping it stops the server.
#[derive(Debug)]
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    join: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Start the read-only HTTP service on its own thread. Returns once the
/// socket is bound, so `local_addr` is immediately valid.
pub fn serve_status(
    cfg: &MonitorConfig,
    state: Arc<MonitorState>,
) -> Result<ServiceHandle, MonitorError> {
    if cfg.max_event_history < 1 {
        return Err(MonitorError::InvalidConfig(
            "max_event_history must be >= 1".into(),
        ));
    }
    let ctx = Arc::new(ServerCtx {
        state,
        credentials: cfg.credentials.clone(),
        page_title: cfg.page_title.clone(),
    });
    let bind_address = cfg.bind_address.clone();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();

    let join = std::thread::Builder::new()
        .name("monitor-http".into())
        .spawn(move || {
            let rt = match tokio::runtime::Builder::new_current_thread()
                .enable_io()
                .build()
            {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = addr_tx.send(Err(e.to_string()));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(&bind_address).await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = addr_tx.send(Err(e.to_string()));
                        return;
                    }
                };
                let addr = listener.local_addr().expect("bound socket has an address");
                let app = Router::new()
                    .route("/", get(index_page))
                    .route("/api/status", get(api_status))
                    .route("/api/events", get(api_events))
                    .route("/api/frame/latest.png", get(api_latest_frame))
                    .layer(middleware::from_fn_with_state(ctx.clone(), basic_auth))
                    .with_state(ctx);
                let _ = addr_tx.send(Ok(addr));
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await;
            });
        })
        .map_err(|e| MonitorError::BindFailure(e.to_string()))?;

    match addr_rx.recv() {
        Ok(Ok(addr)) => Ok(ServiceHandle {
            addr,
            shutdown: Some(shutdown_tx),
            join: Some(join),
        }),
        Ok(Err(msg)) => {
            let _ = join.join();
            Err(MonitorError::BindFailure(msg))
        }
        Err(_) => {
            let _ = join.join();
            Err(MonitorError::BindFailure("server thread died".into()))
        }
    }
}

fn unauthorized() -> Response {
    (
        StatusCode::UNAUTHORIZED,
        [(header::WWW_AUTHENTICATE, "Basic realm=\"monitor\"")],
        "authentication required\n",
    )
        .into_response()
}

async fn basic_auth(
    State(ctx): State<Arc<ServerCtx>>,
    headers: HeaderMap,
    request: axum::extract::Request,
    next: Next,
) -> Response {
    let authorized = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Basic "))
        .and_then(|b64| base64::engine::general_purpose::STANDARD.decode(b64).ok())
        .and_then(|raw| String::from_utf8(raw).ok())
        .and_then(|pair| {
            pair.split_once(':')
                .map(|(u, p)| ctx.credentials.verify(u, p))
        })
        .unwrap_or(false);
    if authorized {
        next.run(request).await
    } else {
        unauthorized()
    }
}

async fn index_page(State(ctx): State<Arc<ServerCtx>>) -> Html<String> {
    let s = ctx.state.snapshot();
    let last = match &s.last_event {
        Some(e) => format!(
            "event {} on frame {} ({:?}, {} flows)",
            e.event_id, e.frame_id, e.severity, e.flow_count
        ),
        None => "none".to_string(),
    };
    Html(format!(
        "<!doctype html><html><head><title>{title}</title></head><body>\
         <h1>{title}</h1>\
         <table>\
         <tr><td>state</td><td>{state:?}</td></tr>\
         <tr><td>uptime</td><td>{uptime} s</td></tr>\
         <tr><td>frames processed</td><td>{frames}</td></tr>\
         <tr><td>events</td><td>{events}</td></tr>\
         <tr><td>current fps</td><td>{fps:.2}</td></tr>\
         <tr><td>last event</td><td>{last}</td></tr>\
         </table>\
         <p><a href=\"/api/status\">status</a> · <a href=\"/api/events\">events</a> · \
         <a href=\"/api/frame/latest.png\">latest frame</a></p>\
         </body></html>",
        title = ctx.page_title,
        state = s.pipeline_state,
        uptime = s.uptime_s,
        frames = s.frames_processed,
        events = s.events_total,
        fps = s.current_fps,
        last = last,
    ))
}

async fn api_status(State(ctx): State<Arc<ServerCtx>>) -> Response {
    let body = serde_json::to_string(&ctx.state.snapshot()).expect("snapshot serializes");
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

#[derive(Deserialize)]
struct EventsQuery {
    limit: Option<usize>,
}

async fn api_events(
    State(ctx): State<Arc<ServerCtx>>,
    Query(q): Query<EventsQuery>,
) -> Response {
    let limit = q.limit.unwrap_or(usize::MAX);
    // events are stored as their exact dispatched bytes; join them verbatim
    // rather than re-serializing
    let items = ctx.state.recent_events(limit);
    let body = format!("[{}]", items.join(","));
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn api_latest_frame(State(ctx): State<Arc<ServerCtx>>) -> Response {
    match ctx.state.latest_frame_png.lock().unwrap().clone() {
        Some(png) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        None => (StatusCode::NOT_FOUND, "no frame processed yet\n").into_response(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config(max_history: usize) -> MonitorConfig {
        MonitorConfig {
            bind_address: "127.0.0.1:0".into(),
            credentials: Credentials::new("vulcan", "magma-pass"),
            page_title: "Flow Monitor".into(),
            max_event_history: max_history,
        }
    }

    fn summary(event_id: u64) -> EventSummary {
        EventSummary {
            event_id,
            frame_id: event_id * 10,
            timestamp_ms: event_id * 1000,
            severity: Severity::Watch,
            flow_count: 1,
        }
    }

    fn get(
        addr: SocketAddr,
        path: &str,
        auth: Option<(&str, &str)>,
    ) -> (u16, HeaderMap, Vec<u8>) {
        let client = reqwest::blocking::Client::new();
        let mut req = client.get(format!("http://{addr}{path}"));
        if let Some((u, p)) = auth {
            req = req.basic_auth(u, Some(p));
        }
        let resp = req.send().unwrap();
        let status = resp.status().as_u16();
        let headers = resp.headers().clone();
        let body = resp.bytes().unwrap().to_vec();
        (status, headers, body)
    }

    #[test]
    fn constant_time_eq_truth_table() {
        let a = [7u8; 32];
        let mut b = a;
        assert!(constant_time_eq(&a, &b));
        b[31] ^= 1;
        assert!(!constant_time_eq(&a, &b));
        b[31] ^= 1;
        b[0] ^= 0x80;
        assert!(!constant_time_eq(&a, &b));
    }

    #[test]
    fn credentials_verify() {
        let c = Credentials::new("user", "secret");
        assert!(c.verify("user", "secret"));
        assert!(!c.verify("user", "wrong"));
        assert!(!c.verify("other", "secret"));
        assert!(!c.verify("user", ""));
    }

    #[test]
    fn ring_buffer_caps_history() {
        let state = MonitorState::new(3);
        for i in 1..=5u64 {
            state.record_event(format!("{{\"event_id\":{i}}}"), summary(i));
        }
        assert_eq!(state.snapshot().events_total, 5);
        let recent = state.recent_events(usize::MAX);
        assert_eq!(
            recent,
            vec![
                "{\"event_id\":5}".to_string(),
                "{\"event_id\":4}".to_string(),
                "{\"event_id\":3}".to_string(),
            ]
        );
    }

    #[test]
    fn auth_contract() {
        let cfg = test_config(8);
        let state = Arc::new(MonitorState::new(8));
        let handle = serve_status(&cfg, state).unwrap();
        let addr = handle.local_addr();

        let (status, headers, _) = get(addr, "/", None);
        assert_eq!(status, 401);
        assert_eq!(
            headers.get("www-authenticate").unwrap(),
            "Basic realm=\"monitor\""
        );

        let (status, ..) = get(addr, "/", Some(("vulcan", "wrong")));
        assert_eq!(status, 401);
        let (status, ..) = get(addr, "/api/status", Some(("intruder", "magma-pass")));
        assert_eq!(status, 401);

        let (status, _, body) = get(addr, "/", Some(("vulcan", "magma-pass")));
        assert_eq!(status, 200);
        assert!(String::from_utf8(body).unwrap().contains("Flow Monitor"));
        handle.stop();
    }

    #[test]
    fn status_endpoint_zero_state() {
        let cfg = test_config(8);
        let state = Arc::new(MonitorState::new(8));
        let handle = serve_status(&cfg, state).unwrap();
        let (status, headers, body) =
            get(handle.local_addr(), "/api/status", Some(("vulcan", "magma-pass")));
        assert_eq!(status, 200);
        assert_eq!(headers.get("content-type").unwrap(), "application/json");
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["frames_processed"], 0);
        assert_eq!(v["events_total"], 0);
        assert_eq!(v["pipeline_state"], "Idle");
        assert_eq!(v["last_event"], serde_json::Value::Null);
        handle.stop();
    }

    #[test]
    fn events_endpoint_newest_first_byte_exact() {
        let cfg = test_config(16);
        let state = Arc::new(MonitorState::new(16));
        let payloads: Vec<String> = (1..=5u64)
            .map(|i| format!("{{\"event_id\":{i},\"severity\":\"Watch\"}}"))
            .collect();
        for (i, p) in payloads.iter().enumerate() {
            state.record_event(p.clone(), summary(i as u64 + 1));
        }
        let handle = serve_status(&cfg, state).unwrap();
        let (status, _, body) = get(
            handle.local_addr(),
            "/api/events?limit=2",
            Some(("vulcan", "magma-pass")),
        );
        assert_eq!(status, 200);
        let expect = format!("[{},{}]", payloads[4], payloads[3]);
        assert_eq!(String::from_utf8(body).unwrap(), expect);

        let (_, _, body) = get(
            handle.local_addr(),
            "/api/events",
            Some(("vulcan", "magma-pass")),
        );
        let v: serde_json::Value =
            serde_json::from_slice(&body).expect("event list parses as JSON");
        assert_eq!(v.as_array().unwrap().len(), 5);
        handle.stop();
    }

    #[test]
    fn latest_frame_endpoint() {
        let cfg = test_config(4);
        let state = Arc::new(MonitorState::new(4));
        let handle = serve_status(&cfg, state.clone()).unwrap();
        let (status, ..) = get(
            handle.local_addr(),
            "/api/frame/latest.png",
            Some(("vulcan", "magma-pass")),
        );
        assert_eq!(status, 404);

        let frame = crate::imaging::Frame::filled(4, 4, (1, 2, 3));
        let png = crate::imaging::encode_png(&frame).unwrap();
        state.set_latest_frame_png(png.clone());
        let (status, headers, body) = get(
            handle.local_addr(),
            "/api/frame/latest.png",
            Some(("vulcan", "magma-pass")),
        );
        assert_eq!(status, 200);
        assert_eq!(headers.get("content-type").unwrap(), "image/png");
        assert_eq!(body, png);
        handle.stop();
    }

    #[test]
    fn counters_monotone() {
        let state = MonitorState::new(4);
        let mut last = state.snapshot();
        for i in 0..10 {
            state.record_frame(12.5 + i as f64);
            if i % 3 == 0 {
                state.record_event(format!("{{\"n\":{i}}}"), summary(i));
            }
            let now = state.snapshot();
            assert!(now.frames_processed >= last.frames_processed);
            assert!(now.events_total >= last.events_total);
            last = now;
        }
        assert_eq!(last.frames_processed, 10);
        assert_eq!(last.events_total, 4);
        assert!((last.current_fps - 21.5).abs() < 1e-12);
    }

    #[test]
    fn bind_failure_reported() {
        // occupy a port, then try to bind the monitor to it
        let blocker = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = blocker.local_addr().unwrap();
        let cfg = MonitorConfig {
            bind_address: addr.to_string(),
            ..test_config(4)
        };
        let err = serve_status(&cfg, Arc::new(MonitorState::new(4))).unwrap_err();
        assert!(matches!(err, MonitorError::BindFailure(_)));
    }
}
