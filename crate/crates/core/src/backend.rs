//! Text-generation backends shared by the condenser and the diversion
//! generator.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cancelled")]
    Cancelled,
    #[error("{0}")]
    Other(String),
}

/// Sampling parameters for a single completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: Option<f64>,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BackendCompletion {
    pub text: String,
    pub prompt_tokens: Option<usize>,
    pub completion_tokens: Option<usize>,
}

impl BackendCompletion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

/// Produces a completion for a single prompt.
///
/// Backends never see session state. Calls may block for a long time.
pub trait CompletionBackend: Send + Sync {
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<T> {
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError> {
        (**self).complete(prompt, params)
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for &T {
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError> {
        (**self).complete(prompt, params)
    }
}

/// Backend that always fails.
#[derive(Debug, Clone, Default)]
pub struct FailingBackend;

impl CompletionBackend for FailingBackend {
    fn complete(&self, _: &str, _: &GenerationParams) -> Result<BackendCompletion, BackendError> {
        Err(BackendError::Other("backend unavailable".into()))
    }
}

/// Backend replaying canned replies in order, recording every prompt.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<std::collections::VecDeque<Result<String, BackendError>>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(replies: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn from_texts<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(
        &self,
        prompt: &str,
        _: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError> {
        self.prompts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(prompt.to_string());
        self.replies
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Other("script exhausted".into())))
            .map(BackendCompletion::text)
    }
}

/// Backend wrapping a plain function of the prompt.
pub struct FnBackend<F>(pub F);

impl<F> CompletionBackend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(
        &self,
        prompt: &str,
        _: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError> {
        (self.0)(prompt).map(BackendCompletion::text)
    }
}
