use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::parse_strict;
use crate::history::HistoryEntry;

pub const CONDENSER_INSTRUCTION: &str = "Condense the information from HumanInput and also share a concise summary of Assistant response to the human input. Make sure you don't miss any specific values and instructions provided by the human input that are relevant for the conversation.
For the assistant response summary, make sure to keep any important points but keep it concise.
Also return the reasoning behind your condensation strategy.
Return in JSON format {\"HumanInput\": \"<text>\", \"Assistant\": \"<text>\", \"Reasoning\": \"<text>\"}. Only return the JSON with no additional text.";

pub const SUMMARIZER_INSTRUCTION: &str = "Summarize the information from HumanInput and also share a concise summary of Assistant response to the human input. Make sure you don't miss any specific values and instructions provided by the human input. For the assistant response summary, make sure to keep any important points but keep it concise. Return in JSON format {\"HumanInput\": \"<text>\", \"Assistant\": \"<text>\"}. Only return the JSON with no additional text.";

pub const HISTORY_LABEL: &str = "Conversation History:";
pub const HUMAN_LABEL: &str = "Human: ";
pub const ASSISTANT_LABEL: &str = "Assistant: ";

const DEFAULT_EXEMPLARS: &str = include_str!("../../assets/exemplars.json");

#[derive(Debug, Error)]
pub enum ExemplarError {
    #[error("need at least 3 exemplars, got {0}")]
    TooFew(usize),
    #[error("exemplar {index} output is not a valid condensation: {reason}")]
    InvalidOutput { index: usize, reason: String },
    #[error("exemplar file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("exemplar file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub conversation: String,
    pub output: String,
}

/// Few-shot examples shown before the window to condense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarSet(Vec<Exemplar>);

impl ExemplarSet {
    pub fn new(exemplars: Vec<Exemplar>) -> Result<Self, ExemplarError> {
        if exemplars.len() < 3 {
            return Err(ExemplarError::TooFew(exemplars.len()));
        }
        for (index, ex) in exemplars.iter().enumerate() {
            let parsed = parse_strict(&ex.output).map_err(|e| ExemplarError::InvalidOutput {
                index,
                reason: e.to_string(),
            })?;
            if parsed.reasoning.trim().is_empty() {
                return Err(ExemplarError::InvalidOutput {
                    index,
                    reason: "missing Reasoning".into(),
                });
            }
        }
        Ok(Self(exemplars))
    }

    pub fn from_json(json: &str) -> Result<Self, ExemplarError> {
        Self::new(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExemplarError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.0
    }
}

impl Default for ExemplarSet {
    fn default() -> Self {
        Self::from_json(DEFAULT_EXEMPLARS).expect("bundled exemplars are valid")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot build a prompt for an empty window")]
pub struct EmptyWindow;

/// Renders entries as blank-line separated `Human:` / `Assistant:` blocks.
pub fn render_window(window: &[HistoryEntry]) -> String {
    let mut out = String::new();
    for (i, entry) in window.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(
            out,
            "{HUMAN_LABEL}{}\n\n{ASSISTANT_LABEL}{}",
            entry.user_text(),
            entry.assistant_text()
        );
    }
    out
}

pub fn build_condenser_prompt(
    window: &[HistoryEntry],
    exemplars: &ExemplarSet,
) -> Result<String, EmptyWindow> {
    if window.is_empty() {
        return Err(EmptyWindow);
    }
    let mut out = String::with_capacity(4096);
    out.push_str(CONDENSER_INSTRUCTION);
    out.push_str("\n\nExamples:\n\n");
    for ex in exemplars.exemplars() {
        let _ = write!(
            out,
            "{HISTORY_LABEL}\n{}\n{}\n\n",
            ex.conversation.trim_end(),
            ex.output.trim()
        );
    }
    out.push_str(HISTORY_LABEL);
    out.push('\n');
    out.push_str(&render_window(window));
    Ok(out)
}

pub fn build_summarizer_prompt(window: &[HistoryEntry]) -> Result<String, EmptyWindow> {
    if window.is_empty() {
        return Err(EmptyWindow);
    }
    Ok(format!(
        "{SUMMARIZER_INSTRUCTION}\n\n{}",
        render_window(window)
    ))
}
