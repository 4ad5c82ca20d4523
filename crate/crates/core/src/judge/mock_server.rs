//! A local stand-in for a chat-completion judge endpoint, used by tests and
//! demos so that nothing ever needs a live model.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct MockReply {
    status: u16,
    content: String,
    delay_ms: u64,
}

impl MockReply {
    /// HTTP 200 with `content` as the assistant message.
    pub fn content(content: impl Into<String>) -> Self {
        MockReply {
            status: 200,
            content: content.into(),
            delay_ms: 0,
        }
    }

    pub fn status(status: u16) -> Self {
        MockReply {
            status,
            content: String::new(),
            delay_ms: 0,
        }
    }

    pub fn delayed(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }
}

type Responder = dyn Fn(&str) -> MockReply + Send + Sync;

struct Shared {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub struct MockJudgeServer {
    server: Arc<tiny_http::Server>,
    port: u16,
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
}

impl MockJudgeServer {
    /// Serves replies computed from the rendered prompt.
    pub fn start<F>(responder: F) -> Self
    where
        F: Fn(&str) -> MockReply + Send + Sync + 'static,
    {
        Self::spawn(Arc::new(responder))
    }

    /// Serves the given replies in order, then repeats the last one.
    pub fn start_sequence(replies: Vec<MockReply>) -> Self {
        assert!(!replies.is_empty());
        let queue = Mutex::new(VecDeque::from(replies));
        Self::start(move |_| {
            let mut q = queue.lock().unwrap();
            if q.len() > 1 {
                q.pop_front().unwrap()
            } else {
                q.front().cloned().unwrap()
            }
        })
    }

    fn spawn(responder: Arc<Responder>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock judge"));
        let port = server
            .server_addr()
            .to_ip()
            .expect("tcp listener")
            .port();
        let shared = Arc::new(Shared {
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let worker = {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    let responder = Arc::clone(&responder);
                    let shared = Arc::clone(&shared);
                    thread::spawn(move || handle(request, &*responder, &shared));
                }
            })
        };
        MockJudgeServer {
            server,
            port,
            shared,
            worker: Some(worker),
        }
    }

    /// Base URL to put in an endpoint config.
    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}/v1", self.port)
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests observed in progress at once.
    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockJudgeServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn handle(mut request: tiny_http::Request, responder: &Responder, shared: &Shared) {
    shared.requests.fetch_add(1, Ordering::SeqCst);
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.max_in_flight.fetch_max(now, Ordering::SeqCst);

    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let prompt = serde_json::from_str::<Value>(&body)
        .ok()
        .and_then(|v| v["messages"][0]["content"].as_str().map(str::to_owned))
        .unwrap_or_default();
    let reply = responder(&prompt);
    if reply.delay_ms > 0 {
        thread::sleep(Duration::from_millis(reply.delay_ms));
    }
    let payload = if reply.status == 200 {
        json!({
            "id": "mock",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply.content}}],
        })
        .to_string()
    } else {
        json!({"error": {"message": "mock failure"}}).to_string()
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
    let response = tiny_http::Response::from_string(payload)
        .with_status_code(reply.status)
        .with_header(header);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    let _ = request.respond(response);
}
