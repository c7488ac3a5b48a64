//! In-process HTTP server exposing any client over the wire schema.
//!
//! Used by tests to drive the real HTTP clients, and by `cascade serve-mock`
//! to run mock services as standalone processes.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};

use super::http::{AsrRequest, LlmRequest, MtRequest, ScoreRequest};
use super::{AsrClient, AudioSpan, BackendError, DecodeParams, LlmClient, MtClient, Scorer};

pub enum MockReply {
    Json(Value),
    Status(u16, String),
    /// Body sent verbatim with status 200, e.g. malformed JSON.
    Raw(String),
}

pub type Handler = dyn Fn(&Value) -> MockReply + Send + Sync;

#[derive(Default)]
struct Stats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

pub struct MockServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    stats: Arc<Stats>,
    shutdown: Arc<AtomicBool>,
    url: String,
}

const WORKERS: usize = 16;

impl MockServer {
    /// Binds an ephemeral localhost port.
    pub fn start(handler: Arc<Handler>) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", handler)
    }

    pub fn bind(addr: &str, handler: Arc<Handler>) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let host = addr.rsplit_once(':').map(|(h, _)| h).unwrap_or("127.0.0.1");
        let url = format!("http://{host}:{port}/");
        let server = Arc::new(server);
        let stats = Arc::new(Stats::default());
        let shutdown = Arc::new(AtomicBool::new(false));
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let handler = Arc::clone(&handler);
                let stats = Arc::clone(&stats);
                let shutdown = Arc::clone(&shutdown);
                thread::spawn(move || loop {
                    match server.recv() {
                        Ok(req) => serve(req, handler.as_ref(), &stats),
                        Err(_) if shutdown.load(Ordering::SeqCst) => break,
                        Err(_) => continue,
                    }
                })
            })
            .collect();
        Ok(MockServer {
            server,
            workers,
            stats,
            shutdown,
            url,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests observed in flight at once.
    pub fn peak_in_flight(&self) -> usize {
        self.stats.peak.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread while the server runs.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn llm(client: Arc<dyn LlmClient>) -> std::io::Result<Self> {
        Self::start(llm_handler(client))
    }

    pub fn asr(client: Arc<dyn AsrClient>) -> std::io::Result<Self> {
        Self::start(asr_handler(client))
    }

    pub fn mt(client: Arc<dyn MtClient>) -> std::io::Result<Self> {
        Self::start(mt_handler(client))
    }

    pub fn scorer(client: Arc<dyn Scorer>) -> std::io::Result<Self> {
        Self::start(scorer_handler(client))
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn serve(mut req: tiny_http::Request, handler: &Handler, stats: &Stats) {
    stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.peak.fetch_max(now, Ordering::SeqCst);

    let mut body = String::new();
    let reply = match req.as_reader().read_to_string(&mut body) {
        Err(e) => MockReply::Status(400, e.to_string()),
        Ok(_) => match serde_json::from_str::<Value>(&body) {
            Ok(v) => handler(&v),
            Err(e) => MockReply::Status(400, format!("invalid JSON: {e}")),
        },
    };
    let (status, text) = match reply {
        MockReply::Json(v) => (200, v.to_string()),
        MockReply::Status(s, t) => (s, t),
        MockReply::Raw(t) => (200, t),
    };
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    let response = tiny_http::Response::from_string(text)
        .with_status_code(status)
        .with_header(header);
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    let _ = req.respond(response);
}

fn reply<T>(result: Result<T, BackendError>, to_json: impl FnOnce(T) -> Value) -> MockReply {
    match result {
        Ok(v) => MockReply::Json(to_json(v)),
        Err(BackendError::Precondition(m)) => MockReply::Status(400, m),
        Err(e) => MockReply::Status(500, e.to_string()),
    }
}

fn bad_request(e: serde_json::Error) -> MockReply {
    MockReply::Status(400, e.to_string())
}

pub fn llm_handler(client: Arc<dyn LlmClient>) -> Arc<Handler> {
    Arc::new(move |body: &Value| {
        match serde_json::from_value::<LlmRequest>(body.clone()) {
            Ok(r) => {
                let params = DecodeParams {
                    beam: r.beam,
                    max_new_tokens: r.max_new_tokens,
                };
                reply(client.complete(&r.prompt, &params), |text| json!({ "text": text }))
            }
            Err(e) => bad_request(e),
        }
    })
}

pub fn asr_handler(client: Arc<dyn AsrClient>) -> Arc<Handler> {
    Arc::new(move |body: &Value| {
        match serde_json::from_value::<AsrRequest>(body.clone()) {
            Ok(r) => {
                let span = AudioSpan {
                    audio: r.audio,
                    start_s: r.start_s,
                    end_s: r.end_s,
                };
                reply(client.transcribe(&span, r.n_best), |h| json!({ "hypotheses": h }))
            }
            Err(e) => bad_request(e),
        }
    })
}

pub fn mt_handler(client: Arc<dyn MtClient>) -> Arc<Handler> {
    Arc::new(move |body: &Value| {
        match serde_json::from_value::<MtRequest>(body.clone()) {
            Ok(r) => reply(client.translate(&r.sentences), |t| json!({ "translations": t })),
            Err(e) => bad_request(e),
        }
    })
}

pub fn scorer_handler(client: Arc<dyn Scorer>) -> Arc<Handler> {
    Arc::new(move |body: &Value| {
        match serde_json::from_value::<ScoreRequest>(body.clone()) {
            Ok(r) => reply(
                client.score(&r.sources, &r.hypotheses, &r.references),
                |s| json!({ "score": s }),
            ),
            Err(e) => bad_request(e),
        }
    })
}

/// Fails the first `failures` requests with `status`, then delegates.
pub fn flaky(inner: Arc<Handler>, failures: usize, status: u16) -> Arc<Handler> {
    let seen = AtomicUsize::new(0);
    Arc::new(move |body: &Value| {
        if seen.fetch_add(1, Ordering::SeqCst) < failures {
            MockReply::Status(status, "injected failure".into())
        } else {
            inner(body)
        }
    })
}

/// Sleeps before delegating, so concurrent requests overlap in time.
pub fn delayed(inner: Arc<Handler>, delay: Duration) -> Arc<Handler> {
    Arc::new(move |body: &Value| {
        thread::sleep(delay);
        inner(body)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::http::{HttpLlm, HttpMt};
    use crate::backends::mock::{IdentityMt, ScriptedLlm};
    use crate::backends::{mt_translate, BackendKind, BackendProfile};
    use std::time::Instant;

    fn profile(kind: BackendKind, url: &str, retries: u32) -> BackendProfile {
        let mut p = BackendProfile::new(kind, url);
        p.max_retries = retries;
        p.backoff_ms = 10;
        p.timeout_s = 5.0;
        p
    }

    fn params() -> DecodeParams {
        DecodeParams {
            beam: 3,
            max_new_tokens: 64,
        }
    }

    #[test]
    fn llm_round_trip_forwards_decode_params() {
        let seen = Arc::new(std::sync::Mutex::new(None));
        let s2 = Arc::clone(&seen);
        let handler: Arc<Handler> = Arc::new(move |body: &Value| {
            *s2.lock().unwrap() = Some(body.clone());
            MockReply::Json(json!({"text": "ok"}))
        });
        let server = MockServer::start(handler).unwrap();
        let llm = HttpLlm::new(profile(BackendKind::Llm, server.url(), 0));
        assert_eq!(llm.complete("hi", &params()).unwrap(), "ok");
        let body = seen.lock().unwrap().clone().unwrap();
        assert_eq!(body, json!({"prompt": "hi", "beam": 3, "max_new_tokens": 64}));
    }

    #[test]
    fn retries_exactly_max_retries_then_fails() {
        let always_down = flaky(llm_handler(Arc::new(ScriptedLlm::constant("x"))), usize::MAX, 503);
        let server = MockServer::start(always_down).unwrap();
        let llm = HttpLlm::new(profile(BackendKind::Llm, server.url(), 3));
        let start = Instant::now();
        let err = llm.complete("p", &params()).unwrap_err();
        assert_eq!(server.requests(), 4);
        assert!(matches!(err, BackendError::Transport { attempts: 4, .. }));
        // backoff 10 + 20 + 40 ms
        assert!(start.elapsed() >= Duration::from_millis(70));
    }

    #[test]
    fn recovers_from_transient_failures() {
        let h = flaky(llm_handler(Arc::new(ScriptedLlm::constant("fine"))), 2, 500);
        let server = MockServer::start(h).unwrap();
        let llm = HttpLlm::new(profile(BackendKind::Llm, server.url(), 3));
        assert_eq!(llm.complete("p", &params()).unwrap(), "fine");
        assert_eq!(server.requests(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let h = flaky(llm_handler(Arc::new(ScriptedLlm::constant("x"))), 1, 404);
        let server = MockServer::start(h).unwrap();
        let llm = HttpLlm::new(profile(BackendKind::Llm, server.url(), 3));
        assert!(matches!(
            llm.complete("p", &params()),
            Err(BackendError::Http { status: 404, .. })
        ));
        assert_eq!(server.requests(), 1);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // bind then drop to get a port nobody listens on
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let llm = HttpLlm::new(profile(BackendKind::Llm, &format!("http://127.0.0.1:{port}/"), 1));
        assert!(matches!(
            llm.complete("p", &params()),
            Err(BackendError::Transport { attempts: 2, .. })
        ));
    }

    #[test]
    fn malformed_response_is_protocol_error() {
        let server = MockServer::start(Arc::new(|_: &Value| MockReply::Raw("{not json".into()))).unwrap();
        let llm = HttpLlm::new(profile(BackendKind::Llm, server.url(), 2));
        assert!(matches!(llm.complete("p", &params()), Err(BackendError::Protocol(_))));
        assert_eq!(server.requests(), 1);
        let server = MockServer::start(Arc::new(|_: &Value| MockReply::Json(json!({"txt": 1})))).unwrap();
        let llm = HttpLlm::new(profile(BackendKind::Llm, server.url(), 0));
        assert!(matches!(llm.complete("p", &params()), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn mt_short_response_is_protocol_error() {
        let h: Arc<Handler> = Arc::new(|body: &Value| {
            let n = body["sentences"].as_array().map_or(0, |a| a.len());
            let out: Vec<String> = (0..n.saturating_sub(1)).map(|i| format!("t{i}")).collect();
            MockReply::Json(json!({ "translations": out }))
        });
        let server = MockServer::start(h).unwrap();
        let mt = HttpMt::new(profile(BackendKind::Mt, server.url(), 0));
        let s: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        assert!(matches!(mt_translate(&mt, &s), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn mt_identity_over_http() {
        let server = MockServer::mt(Arc::new(IdentityMt)).unwrap();
        let mt = HttpMt::new(profile(BackendKind::Mt, server.url(), 0));
        let s: Vec<String> = vec!["Hallo".into(), "Welt".into()];
        assert_eq!(mt_translate(&mt, &s).unwrap(), s);
    }

    #[test]
    fn parallelism_cap_is_never_exceeded() {
        let h = delayed(llm_handler(Arc::new(ScriptedLlm::constant("x"))), Duration::from_millis(30));
        let server = MockServer::start(h).unwrap();
        let mut p = profile(BackendKind::Llm, server.url(), 0);
        p.parallelism = 3;
        let llm = Arc::new(HttpLlm::new(p));
        thread::scope(|s| {
            for _ in 0..12 {
                let llm = Arc::clone(&llm);
                s.spawn(move || llm.complete("p", &params()).unwrap());
            }
        });
        assert_eq!(server.requests(), 12);
        assert!(server.peak_in_flight() <= 3, "peak {}", server.peak_in_flight());
        assert!(server.peak_in_flight() >= 2, "requests should overlap");
    }
}
