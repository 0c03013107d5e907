//! Chat-completions client: JSON body with model/temperature/seed/messages,
//! images as inline base64 data URLs. 429 surfaces as `RateLimited`;
//! 5xx, 408 and transport errors are retried with exponential backoff.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, Completion, Usage};
use crate::prompting::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Shared across all runs of a suite; `None` means unlimited.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_true")]
    pub images: bool,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_backoff_ms() -> u64 {
    8_000
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_true() -> bool {
    true
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
            timeout_secs: default_timeout_secs(),
            requests_per_minute: None,
            images: true,
        }
    }

    pub(crate) fn client(&self) -> Result<reqwest::blocking::Client, BackendError> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))
    }

    pub(crate) fn rate_limiter(&self) -> RateLimiter {
        match self.requests_per_minute {
            Some(rpm) if rpm > 0 => RateLimiter::new(Duration::from_secs_f64(60.0 / rpm as f64)),
            _ => RateLimiter::new(Duration::ZERO),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

/// Minimum spacing between requests, shared by every session of a provider.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        Self {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    /// Blocks until this caller's slot.
    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub struct HttpChat {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    limiter: Arc<RateLimiter>,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChat")
            .field("base_url", &self.cfg.base_url)
            .field("model", &self.cfg.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChat {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        let client = cfg.client()?;
        let limiter = Arc::new(cfg.rate_limiter());
        Ok(Self::with_client(cfg, client, limiter))
    }

    pub fn with_client(cfg: HttpConfig, client: reqwest::blocking::Client, limiter: Arc<RateLimiter>) -> Self {
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without authorization", cfg.api_key_env);
        }
        Self {
            cfg,
            client,
            limiter,
            api_key,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }
}

fn message_json(m: &Message, images: bool) -> Value {
    match (&m.image, images) {
        (Some(img), true) => {
            let data = base64::engine::general_purpose::STANDARD.encode(img.to_png());
            json!({
                "role": m.role.as_str(),
                "content": [
                    {"type": "text", "text": m.text},
                    {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{data}")}}
                ]
            })
        }
        _ => json!({"role": m.role.as_str(), "content": m.text}),
    }
}

pub(crate) fn request_body(req: &ChatRequest<'_>, images: bool) -> Value {
    json!({
        "model": req.model_id,
        "temperature": req.temperature,
        "seed": req.seed,
        "messages": req.messages.iter().map(|m| message_json(m, images)).collect::<Vec<_>>(),
    })
}

pub(crate) fn parse_completion(body: &Value) -> Result<Completion, BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))?
        .to_string();
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok(Completion { text, usage })
}

impl ChatBackend for HttpChat {
    fn label(&self) -> String {
        format!("http-{}", self.cfg.model)
    }

    fn model_id(&self) -> String {
        self.cfg.model.clone()
    }

    fn supports_images(&self) -> bool {
        self.cfg.images
    }

    fn complete(&mut self, req: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let body = request_body(req, self.cfg.images);
        let url = self.endpoint();
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            let mut rb = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                rb = rb.bearer_auth(key);
            }
            let retryable_msg = match rb.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.as_u16() == 429 {
                        let retry_after_secs = resp
                            .headers()
                            .get(reqwest::header::RETRY_AFTER)
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.trim().parse().ok());
                        return Err(BackendError::RateLimited { retry_after_secs });
                    }
                    if status.is_success() {
                        let json: Value = resp
                            .json()
                            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
                        return parse_completion(&json);
                    }
                    let text: String = resp.text().unwrap_or_default().chars().take(500).collect();
                    if status.is_server_error() || status.as_u16() == 408 {
                        format!("HTTP {status}: {text}")
                    } else {
                        return Err(BackendError::Http {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                }
                Err(e) => e.to_string(),
            };
            attempt += 1;
            if attempt > self.cfg.max_retries {
                return Err(BackendError::Transport {
                    attempts: attempt,
                    msg: retryable_msg,
                });
            }
            let delay = self.cfg.backoff(attempt - 1);
            log::warn!("request failed ({retryable_msg}); retry {attempt} in {delay:?}");
            std::thread::sleep(delay);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_io::render_image;
    use crate::grid::GridMap;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned (status, body) per connection and returns the raw
    /// requests it saw.
    fn mock_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    let done = line == "\r\n";
                    head.push_str(&line);
                    if done {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(format!("{head}{}", String::from_utf8_lossy(&buf)));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn cfg(url: &str, key_env: &str) -> HttpConfig {
        HttpConfig {
            api_key_env: key_env.into(),
            backoff_ms: 1,
            max_backoff_ms: 5,
            timeout_secs: 10,
            ..HttpConfig::new(url, "test-model")
        }
    }

    fn req_msgs() -> Vec<Message> {
        vec![Message::system("sys"), Message::user("hi")]
    }

    fn call(chat: &mut HttpChat) -> Result<Completion, BackendError> {
        let msgs = req_msgs();
        chat.complete(&ChatRequest { messages: &msgs, model_id: "test-model", temperature: 1.0, seed: 42 })
    }

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Agent 1: (0,0)"}}],"usage":{"prompt_tokens":11,"completion_tokens":7}}"#;

    #[test]
    fn retries_server_errors_then_succeeds() {
        std::env::set_var("MAPF_TEST_KEY_RETRY", "sk-secret");
        let (url, server) = mock_server(vec![(503, "{}".into()), (500, "{}".into()), (200, OK_BODY.into())]);
        let mut chat = HttpChat::new(cfg(&url, "MAPF_TEST_KEY_RETRY")).unwrap();
        let c = call(&mut chat).unwrap();
        assert_eq!(c.text, "Agent 1: (0,0)");
        assert_eq!(c.usage, Some(Usage { prompt_tokens: 11, completion_tokens: 7 }));
        let seen = server.join().unwrap();
        assert_eq!(seen.len(), 3);
        let last = &seen[2];
        assert!(last.starts_with("POST /v1/chat/completions"));
        assert!(last.to_ascii_lowercase().contains("authorization: bearer sk-secret"));
        let body: Value = serde_json::from_str(last.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["seed"], 42);
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "hi");
        assert!(!format!("{chat:?}").contains("sk-secret"));
    }

    #[test]
    fn rate_limit_is_not_retried() {
        let (url, server) = mock_server(vec![(429, "{}".into())]);
        let mut chat = HttpChat::new(cfg(&url, "MAPF_TEST_KEY_UNSET")).unwrap();
        assert!(matches!(call(&mut chat), Err(BackendError::RateLimited { .. })));
        assert_eq!(server.join().unwrap().len(), 1);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (url, server) = mock_server(vec![(500, "{}".into()); 4]);
        let mut chat = HttpChat::new(cfg(&url, "MAPF_TEST_KEY_UNSET")).unwrap();
        assert!(matches!(call(&mut chat), Err(BackendError::Transport { attempts: 4, .. })));
        server.join().unwrap();
    }

    #[test]
    fn client_errors_surface_immediately() {
        let (url, server) = mock_server(vec![(400, r#"{"error":"bad"}"#.into())]);
        let mut chat = HttpChat::new(cfg(&url, "MAPF_TEST_KEY_UNSET")).unwrap();
        assert!(matches!(call(&mut chat), Err(BackendError::Http { status: 400, .. })));
        server.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let mut c = cfg("http://127.0.0.1:9", "MAPF_TEST_KEY_UNSET");
        c.max_retries = 1;
        let mut chat = HttpChat::new(c).unwrap();
        assert!(matches!(call(&mut chat), Err(BackendError::Transport { attempts: 2, .. })));
    }

    #[test]
    fn image_messages_use_data_urls() {
        let mut m = Message::user("see map");
        m.image = Some(render_image(&GridMap::empty("e", 2, 2).unwrap(), 4));
        let v = message_json(&m, true);
        let url = v["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,iVBORw0KGgo"));
        assert_eq!(message_json(&m, false)["content"], "see map");
    }

    #[test]
    fn completion_without_usage() {
        let body: Value = serde_json::from_str(r#"{"choices":[{"message":{"content":"x"}}]}"#).unwrap();
        assert_eq!(parse_completion(&body).unwrap().usage, None);
        assert!(parse_completion(&json!({})).is_err());
    }

    #[test]
    fn limiter_spaces_requests() {
        let l = RateLimiter::new(Duration::from_millis(20));
        let t0 = Instant::now();
        for _ in 0..3 {
            l.acquire();
        }
        assert!(t0.elapsed() >= Duration::from_millis(40));
    }
}
