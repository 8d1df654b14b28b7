//! Deterministic stand-ins for a condensation model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::ParsedCondensation;
use super::prompt::{ASSISTANT_LABEL, HISTORY_LABEL, HUMAN_LABEL};
use crate::backend::{BackendCompletion, BackendError, CompletionBackend, GenerationParams};
use crate::history::HistoryEntry;
use crate::tokenizer::{default_token_count, truncate_tokens};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MockError {
    #[error("cannot condense an empty window")]
    EmptyWindow,
    #[error("ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
}

fn ratio_budget(ratio: f64, total: usize) -> usize {
    // keeps 0.2 * 200 at 40 despite float noise
    (ratio * total as f64 - 1e-9).ceil().max(0.0) as usize
}

fn truncate_by_ratio(text: &str, ratio: f64) -> String {
    truncate_tokens(text, ratio_budget(ratio, default_token_count(text)))
}

/// Keeps the leading `ratio` share of the window's user and assistant tokens
/// (whitespace-run tokens, rounded up). Reasoning is `"mock"`.
pub fn mock_condense(window: &[HistoryEntry], ratio: f64) -> Result<ParsedCondensation, MockError> {
    if window.is_empty() {
        return Err(MockError::EmptyWindow);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(MockError::InvalidRatio(ratio));
    }
    let users = join(window.iter().map(HistoryEntry::user_text));
    let assistants = join(window.iter().map(HistoryEntry::assistant_text));
    Ok(ParsedCondensation {
        human_input: truncate_by_ratio(&users, ratio),
        assistant_summary: truncate_by_ratio(&assistants, ratio),
        reasoning: "mock".into(),
    })
}

fn join<'a>(texts: impl Iterator<Item = &'a str>) -> String {
    texts
        .filter(|t| !t.trim().is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Output size policy of [`MockCondenserBackend`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockSize {
    /// Leading share of each side, as in [`mock_condense`].
    Ratio(f64),
    /// Exactly this many tokens per side, padded when the window is shorter.
    Fixed { user: usize, assistant: usize },
}

/// Backend that reads the window back out of a condenser or summarizer
/// prompt and answers with a well-formed condensation JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCondenserBackend {
    pub size: MockSize,
}

impl MockCondenserBackend {
    pub fn ratio(ratio: f64) -> Self {
        Self {
            size: MockSize::Ratio(ratio),
        }
    }

    pub fn fixed(user: usize, assistant: usize) -> Self {
        Self {
            size: MockSize::Fixed { user, assistant },
        }
    }

    pub fn respond(&self, prompt: &str) -> String {
        let blocks = extract_blocks(prompt);
        if blocks.is_empty() {
            return "I could not find a conversation to condense.".into();
        }
        let users = join(blocks.iter().map(|(u, _)| u.as_str()));
        let assistants = join(blocks.iter().map(|(_, a)| a.as_str()));
        let (human_input, assistant_summary) = match self.size {
            MockSize::Ratio(r) => (
                truncate_by_ratio(&users, r),
                truncate_by_ratio(&assistants, r),
            ),
            MockSize::Fixed { user, assistant } => (fit(&users, user), fit(&assistants, assistant)),
        };
        let or_none = |s: String| {
            if s.is_empty() {
                "(none)".to_string()
            } else {
                s
            }
        };
        ParsedCondensation {
            human_input: or_none(human_input),
            assistant_summary: or_none(assistant_summary),
            reasoning: "mock".into(),
        }
        .to_json()
    }
}

impl CompletionBackend for MockCondenserBackend {
    fn complete(
        &self,
        prompt: &str,
        _: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError> {
        Ok(BackendCompletion::text(self.respond(prompt)))
    }
}

/// Exactly `n` whitespace tokens: the leading words of `text`, padded.
fn fit(text: &str, n: usize) -> String {
    let mut words: Vec<&str> = text.split_whitespace().take(n).collect();
    words.resize(n, "pad");
    words.join(" ")
}

/// `(human, assistant)` blocks after the last history label, or in the whole
/// prompt when there is none.
fn extract_blocks(prompt: &str) -> Vec<(String, String)> {
    let region = prompt
        .rfind(HISTORY_LABEL)
        .map_or(prompt, |i| &prompt[i + HISTORY_LABEL.len()..]);
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut current: Option<&mut String> = None;
    for line in region.lines() {
        if let Some(rest) = line.strip_prefix(HUMAN_LABEL) {
            blocks.push((rest.to_string(), String::new()));
            current = blocks.last_mut().map(|b| &mut b.0);
        } else if let Some(rest) = line.strip_prefix(ASSISTANT_LABEL) {
            if blocks.last().is_none_or(|b| !b.1.is_empty()) {
                blocks.push((String::new(), String::new()));
            }
            let last = blocks.last_mut().expect("pushed above");
            last.1 = rest.to_string();
            current = Some(&mut last.1);
        } else if let Some(buf) = current.as_deref_mut() {
            buf.push('\n');
            buf.push_str(line);
        }
    }
    blocks
}
