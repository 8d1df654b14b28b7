//! Blocking client for OpenAI-compatible `/v1/chat/completions` endpoints.

mod stub;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use stub::{StubReply, StubServer};

use crate::backend::{BackendCompletion, BackendError, CompletionBackend, GenerationParams};
use crate::history::{Message, Role};
use crate::tokenizer::{SharedTokenizer, Tokenizer};

pub const ENV_BASE_URL: &str = "CHATCONDENSE_BASE_URL";
pub const ENV_API_KEY: &str = "CHATCONDENSE_API_KEY";

/// API key that never prints its value.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

/// Provider quirks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderProfile {
    pub name: String,
    pub supports_frequency_penalty: bool,
}

impl Default for ProviderProfile {
    fn default() -> Self {
        Self {
            name: "openai-compatible".into(),
            supports_frequency_penalty: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub base_url: String,
    pub api_key: Option<ApiKey>,
    pub timeout: Duration,
    pub max_retries: usize,
    pub backoff_base: Duration,
    pub profile: ProviderProfile,
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            profile: ProviderProfile::default(),
        }
    }

    /// Reads the base URL and key from `CHATCONDENSE_*`, falling back to
    /// `OPENAI_*`. Returns `None` when no key is set.
    pub fn from_env() -> Option<Self> {
        let var = |primary: &str, fallback: &str| {
            std::env::var(primary)
                .or_else(|_| std::env::var(fallback))
                .ok()
                .filter(|v| !v.trim().is_empty())
        };
        let key = var(ENV_API_KEY, "OPENAI_API_KEY")?;
        let base =
            var(ENV_BASE_URL, "OPENAI_BASE_URL").unwrap_or_else(|| "https://api.openai.com".into());
        Some(Self::new(base).with_api_key(key))
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(ApiKey::new(key));
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout.is_zero() {
            return Err(BackendError::Other("timeout must be positive".into()));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| BackendError::Other(format!("invalid base url: {e}")))?;
        Ok(())
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/chat/completions")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: Role,
    pub content: String,
}

/// Request body. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(rename = "model")]
    pub model_id: String,
    pub messages: Vec<WireMessage>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_penalty: Option<f64>,
    pub max_completion_tokens: usize,
}

impl ChatRequest {
    pub fn new(messages: &[Message], params: &GenerationParams) -> Self {
        Self {
            model_id: params.model_id.clone(),
            messages: messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role,
                    content: m.content.clone(),
                })
                .collect(),
            temperature: params.temperature,
            top_p: params.top_p,
            frequency_penalty: params.frequency_penalty,
            max_completion_tokens: params.max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::Other("request has no messages".into()));
        }
        Ok(())
    }

    /// JSON body as sent to a provider with `profile`.
    pub fn to_body(&self, profile: &ProviderProfile) -> String {
        let mut req = self.clone();
        if !profile.supports_frequency_penalty {
            req.frequency_penalty = None;
        }
        serde_json::to_string(&req).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatCompletion {
    pub text: String,
    pub prompt_tokens: Option<usize>,
    pub completion_tokens: Option<usize>,
}

pub struct ChatClient {
    http: reqwest::blocking::Client,
    config: ClientConfig,
    tokenizer: SharedTokenizer,
}

impl fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.config.endpoint())
            .field("has_api_key", &self.config.api_key.is_some())
            .finish()
    }
}

enum Attempt {
    Done(ChatCompletion),
    Retry(BackendError),
    Fatal(BackendError),
}

impl ChatClient {
    pub fn new(config: ClientConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .pool_max_idle_per_host(8)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            config,
            tokenizer: SharedTokenizer::default(),
        })
    }

    pub fn with_tokenizer(mut self, tokenizer: SharedTokenizer) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Sends one request, retrying 429, 5xx and timeouts with exponential
    /// backoff. Missing usage counts are filled in with the local tokenizer.
    pub fn chat_complete(&self, request: &ChatRequest) -> Result<ChatCompletion, BackendError> {
        request.validate()?;
        let body = request.to_body(&self.config.profile);
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = self.config.backoff_base * 2u32.saturating_pow(attempt as u32 - 1);
                tracing::debug!(attempt, ?delay, error = %last, "retrying chat completion");
                std::thread::sleep(delay);
            }
            match self.attempt(&body) {
                Attempt::Done(mut completion) => {
                    completion.prompt_tokens.get_or_insert_with(|| {
                        request
                            .messages
                            .iter()
                            .map(|m| self.tokenizer.count(&m.content))
                            .sum()
                    });
                    completion
                        .completion_tokens
                        .get_or_insert_with(|| self.tokenizer.count(&completion.text));
                    return Ok(completion);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => last = e,
            }
        }
        Err(match last {
            BackendError::RateLimited { .. } => BackendError::RateLimited {
                attempts: self.config.max_retries + 1,
            },
            other => other,
        })
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut req = self
            .http
            .post(self.config.endpoint())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Attempt::Retry(BackendError::Transport(e.without_url().to_string()))
            }
            Err(e) => return Attempt::Fatal(BackendError::Transport(e.without_url().to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(BackendError::Transport(e.without_url().to_string())),
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(BackendError::Auth(status)),
            429 => Attempt::Retry(BackendError::RateLimited { attempts: 0 }),
            500..=599 => Attempt::Retry(BackendError::Transport(format!("HTTP {status}"))),
            _ => Attempt::Fatal(BackendError::Transport(format!(
                "HTTP {status}: {}",
                truncate_chars(&text, 200)
            ))),
        }
    }
}

fn truncate_chars(text: &str, max: usize) -> &str {
    text.char_indices()
        .nth(max)
        .map_or(text, |(i, _)| &text[..i])
}

fn parse_completion(body: &str) -> Result<ChatCompletion, BackendError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| {
            BackendError::MalformedResponse("missing choices[0].message.content".into())
        })?;
    let usage = |key: &str| {
        value
            .pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .map(|n| n as usize)
    };
    Ok(ChatCompletion {
        text: text.to_string(),
        prompt_tokens: usage("prompt_tokens"),
        completion_tokens: usage("completion_tokens"),
    })
}

impl CompletionBackend for ChatClient {
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError> {
        let request = ChatRequest::new(&[Message::user(prompt)], params);
        let c = self.chat_complete(&request)?;
        Ok(BackendCompletion {
            text: c.text,
            prompt_tokens: c.prompt_tokens,
            completion_tokens: c.completion_tokens,
        })
    }
}
