//! Few-shot condensation of a history window into a single pair.

mod mock;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{mock_condense, MockCondenserBackend, MockError, MockSize};
pub use parse::{parse_condenser_output, parse_strict, ParseError, ParsedCondensation};
pub use prompt::{
    build_condenser_prompt, build_summarizer_prompt, render_window, EmptyWindow, Exemplar,
    ExemplarError, ExemplarSet, CONDENSER_INSTRUCTION, HISTORY_LABEL, SUMMARIZER_INSTRUCTION,
};

use crate::backend::{BackendError, CompletionBackend, GenerationParams};
use crate::history::HistoryEntry;
use crate::session::{JobOutcome, TriggerRequest};
use crate::tokenizer::Tokenizer;

/// Inference settings for condensation calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CondenserParams {
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub max_completion_tokens: usize,
    pub top_p: f64,
    pub model_id: String,
}

impl Default for CondenserParams {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            frequency_penalty: 1.0,
            max_completion_tokens: 10_000,
            top_p: 1.0,
            model_id: "meta-llama/Llama-3.3-70B-Instruct".into(),
        }
    }
}

impl CondenserParams {
    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            frequency_penalty: Some(self.frequency_penalty),
            max_tokens: self.max_completion_tokens,
        }
    }
}

/// Which instruction the backend receives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// Few-shot condensation with a reasoning field.
    #[default]
    FewShot,
    /// Plain two-key summarization, used as an ablation.
    Summarizer,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CondenseError {
    #[error(transparent)]
    EmptyWindow(#[from] EmptyWindow),
    #[error("condenser backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("condenser output unparseable after {attempts} attempts: {last}")]
    ParseFailedAfterRetries { attempts: usize, last: ParseError },
}

/// Result of one condensation job, with the tokens it consumed either way.
#[derive(Debug, Clone, PartialEq)]
pub struct CondenseReport {
    pub result: Result<crate::history::CondensedPair, CondenseError>,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub attempts: usize,
}

impl CondenseReport {
    pub fn into_outcome(self, trigger_turn: usize) -> JobOutcome {
        JobOutcome {
            trigger_turn,
            result: self.result.map_err(|e| e.to_string()),
            input_tokens: self.input_tokens,
            output_tokens: self.output_tokens,
        }
    }
}

/// Anything that can turn a triggered window into a condensed pair.
pub trait WindowCondenser: Send + Sync {
    fn condense(&self, trigger: &TriggerRequest, tokenizer: &dyn Tokenizer) -> CondenseReport;
}

/// Prompt-build, backend call and parse, with retries on unparseable output.
#[derive(Debug, Clone)]
pub struct Condenser<B> {
    backend: B,
    params: CondenserParams,
    exemplars: ExemplarSet,
    style: PromptStyle,
    retry_limit: usize,
    strict_json: bool,
}

impl<B: CompletionBackend> Condenser<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            params: CondenserParams::default(),
            exemplars: ExemplarSet::default(),
            style: PromptStyle::FewShot,
            retry_limit: 2,
            strict_json: false,
        }
    }

    pub fn with_params(mut self, params: CondenserParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_exemplars(mut self, exemplars: ExemplarSet) -> Self {
        self.exemplars = exemplars;
        self
    }

    pub fn with_style(mut self, style: PromptStyle) -> Self {
        self.style = style;
        self
    }

    pub fn with_retry_limit(mut self, retry_limit: usize) -> Self {
        self.retry_limit = retry_limit;
        self
    }

    /// Requires the reply to be a bare JSON object.
    pub fn with_strict_json(mut self, strict: bool) -> Self {
        self.strict_json = strict;
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn build_prompt(&self, window: &[HistoryEntry]) -> Result<String, EmptyWindow> {
        match self.style {
            PromptStyle::FewShot => build_condenser_prompt(window, &self.exemplars),
            PromptStyle::Summarizer => build_summarizer_prompt(window),
        }
    }

    /// Condenses `window`; the pair covers the window's turns and carries
    /// `generation_index`.
    pub fn condense_window(
        &self,
        window: &[HistoryEntry],
        generation_index: usize,
        tokenizer: &dyn Tokenizer,
    ) -> CondenseReport {
        let mut report = CondenseReport {
            result: Err(CondenseError::EmptyWindow(EmptyWindow)),
            input_tokens: 0,
            output_tokens: 0,
            attempts: 0,
        };
        let prompt = match self.build_prompt(window) {
            Ok(p) => p,
            Err(e) => {
                report.result = Err(e.into());
                return report;
            }
        };
        let (from, to) = (
            window.first().map_or(0, HistoryEntry::first_turn),
            window.last().map_or(0, HistoryEntry::last_turn),
        );
        let gen = self.params.generation_params();
        let mut last_error = ParseError::NoJsonFound;
        for _ in 0..=self.retry_limit {
            report.attempts += 1;
            let completion = match self.backend.complete(&prompt, &gen) {
                Ok(c) => c,
                Err(e) => {
                    report.result = Err(e.into());
                    return report;
                }
            };
            report.input_tokens += completion
                .prompt_tokens
                .unwrap_or_else(|| tokenizer.count(&prompt));
            report.output_tokens += completion
                .completion_tokens
                .unwrap_or_else(|| tokenizer.count(&completion.text));
            let parsed = if self.strict_json {
                parse_strict(&completion.text)
            } else {
                parse_condenser_output(&completion.text)
            };
            match parsed {
                Ok(p) => {
                    report.result = Ok(p.into_pair(from, to, generation_index));
                    return report;
                }
                Err(e) => {
                    tracing::debug!(attempt = report.attempts, error = %e, "condenser output rejected");
                    last_error = e;
                }
            }
        }
        report.result = Err(CondenseError::ParseFailedAfterRetries {
            attempts: report.attempts,
            last: last_error,
        });
        report
    }
}

impl<B: CompletionBackend> WindowCondenser for Condenser<B> {
    fn condense(&self, trigger: &TriggerRequest, tokenizer: &dyn Tokenizer) -> CondenseReport {
        self.condense_window(&trigger.window, trigger.generation_index, tokenizer)
    }
}

/// Runs the full condensation path once over `window`.
pub fn condense(
    window: &[HistoryEntry],
    backend: &dyn CompletionBackend,
    params: &CondenserParams,
    exemplars: &ExemplarSet,
    tokenizer: &dyn Tokenizer,
) -> CondenseReport {
    Condenser::new(backend)
        .with_params(params.clone())
        .with_exemplars(exemplars.clone())
        .condense_window(window, 1, tokenizer)
}
