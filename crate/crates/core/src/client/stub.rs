//! Local OpenAI-compatible server double for offline tests.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use crate::tokenizer::default_token_count;

/// One canned response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubReply {
    /// A 200 completion carrying `text`, with usage counted from the request.
    Completion(String),
    /// An arbitrary status and body.
    Raw { status: u16, body: String },
}

impl StubReply {
    pub fn completion(text: impl Into<String>) -> Self {
        Self::Completion(text.into())
    }

    pub fn status(status: u16) -> Self {
        Self::Raw {
            status,
            body: json!({"error": {"message": format!("stub status {status}")}}).to_string(),
        }
    }

    pub fn raw(status: u16, body: impl Into<String>) -> Self {
        Self::Raw {
            status,
            body: body.into(),
        }
    }
}

type Responder = dyn Fn(&Value) -> StubReply + Send + Sync;

enum Source {
    Script(Mutex<VecDeque<StubReply>>),
    Dynamic(Box<Responder>),
}

#[derive(Default)]
struct Recorded {
    bodies: Vec<String>,
    auth: Vec<Option<String>>,
}

/// Serves `POST /v1/chat/completions` on an ephemeral local port until
/// dropped, recording every request body.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    addr: std::net::SocketAddr,
    recorded: Arc<Mutex<Recorded>>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Replies from `script` in order; once exhausted, every request gets 500.
    pub fn scripted(script: Vec<StubReply>) -> Self {
        Self::start(Source::Script(Mutex::new(script.into())))
    }

    /// Computes each reply from the parsed request body.
    pub fn dynamic(responder: impl Fn(&Value) -> StubReply + Send + Sync + 'static) -> Self {
        Self::start(Source::Dynamic(Box::new(responder)))
    }

    fn start(source: Source) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub server"));
        let addr = server
            .server_addr()
            .to_ip()
            .expect("stub server listens on an ip socket");
        let recorded = Arc::new(Mutex::new(Recorded::default()));
        let worker = {
            let server = Arc::clone(&server);
            let recorded = Arc::clone(&recorded);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &source, &recorded);
                }
            })
        };
        Self {
            server,
            addr,
            recorded,
            worker: Some(worker),
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Raw request bodies in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.lock().bodies.clone()
    }

    /// Parsed request bodies; unparseable bodies become `Value::Null`.
    pub fn request_json(&self) -> Vec<Value> {
        self.requests()
            .iter()
            .map(|b| serde_json::from_str(b).unwrap_or(Value::Null))
            .collect()
    }

    pub fn authorization_headers(&self) -> Vec<Option<String>> {
        self.lock().auth.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Recorded> {
        self.recorded.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn handle(mut request: tiny_http::Request, source: &Source, recorded: &Mutex<Recorded>) {
    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let is_completion = request.method() == &tiny_http::Method::Post
        && request
            .url()
            .trim_end_matches('/')
            .ends_with("/v1/chat/completions");
    if !is_completion {
        let _ =
            request.respond(tiny_http::Response::from_string("not found").with_status_code(404));
        return;
    }
    let auth = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.to_string());
    {
        let mut rec = recorded.lock().unwrap_or_else(|e| e.into_inner());
        rec.bodies.push(body.clone());
        rec.auth.push(auth);
    }
    let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
    let reply = match source {
        Source::Script(script) => script
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .unwrap_or_else(|| StubReply::raw(500, r#"{"error":{"message":"script exhausted"}}"#)),
        Source::Dynamic(f) => f(&parsed),
    };
    let (status, body) = match reply {
        StubReply::Completion(text) => (200, completion_body(&parsed, &text)),
        StubReply::Raw { status, body } => (status, body),
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
        .expect("static header is valid");
    let _ = request.respond(
        tiny_http::Response::from_string(body)
            .with_status_code(status)
            .with_header(header),
    );
}

fn completion_body(request: &Value, text: &str) -> String {
    let prompt_tokens: usize = request
        .get("messages")
        .and_then(Value::as_array)
        .map(|msgs| {
            msgs.iter()
                .filter_map(|m| m.get("content").and_then(Value::as_str))
                .map(default_token_count)
                .sum()
        })
        .unwrap_or(0);
    let completion_tokens = default_token_count(text);
    json!({
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "model": request.get("model").cloned().unwrap_or(Value::Null),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens
        }
    })
    .to_string()
}
