//! Chat history domain types.

use serde::{Deserialize, Serialize};

use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One side of an exchange, with its token count under the active tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub token_count: usize,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>, tokenizer: &dyn Tokenizer) -> Self {
        let text = text.into();
        let token_count = tokenizer.count(&text);
        Self {
            role,
            text,
            token_count,
        }
    }

    pub fn user(text: impl Into<String>, tokenizer: &dyn Tokenizer) -> Self {
        Self::new(Role::User, text, tokenizer)
    }

    pub fn assistant(text: impl Into<String>, tokenizer: &dyn Tokenizer) -> Self {
        Self::new(Role::Assistant, text, tokenizer)
    }
}

/// A user message and the assistant reply to it. `turn_index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangePair {
    pub user: Turn,
    pub assistant: Turn,
    pub turn_index: usize,
}

impl ExchangePair {
    pub fn new(turn_index: usize, user: Turn, assistant: Turn) -> Self {
        debug_assert_eq!(user.role, Role::User);
        debug_assert_eq!(assistant.role, Role::Assistant);
        Self {
            user,
            assistant,
            turn_index,
        }
    }

    pub fn tokens(&self) -> usize {
        self.user.token_count + self.assistant.token_count
    }
}

/// Replacement for a window of history, shaped like a single exchange.
///
/// `reasoning` is kept for inspection and never rendered into a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondensedPair {
    pub human_input: String,
    pub assistant_summary: String,
    #[serde(default)]
    pub reasoning: String,
    pub covers_from: usize,
    pub covers_to: usize,
    pub generation_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEntry {
    Raw(ExchangePair),
    Condensed(CondensedPair),
}

impl HistoryEntry {
    pub fn user_text(&self) -> &str {
        match self {
            HistoryEntry::Raw(p) => &p.user.text,
            HistoryEntry::Condensed(c) => &c.human_input,
        }
    }

    pub fn assistant_text(&self) -> &str {
        match self {
            HistoryEntry::Raw(p) => &p.assistant.text,
            HistoryEntry::Condensed(c) => &c.assistant_summary,
        }
    }

    /// First session turn this entry accounts for.
    pub fn first_turn(&self) -> usize {
        match self {
            HistoryEntry::Raw(p) => p.turn_index,
            HistoryEntry::Condensed(c) => c.covers_from,
        }
    }

    /// Last session turn this entry accounts for.
    pub fn last_turn(&self) -> usize {
        match self {
            HistoryEntry::Raw(p) => p.turn_index,
            HistoryEntry::Condensed(c) => c.covers_to,
        }
    }

    pub fn is_condensed(&self) -> bool {
        matches!(self, HistoryEntry::Condensed(_))
    }

    /// Renders the entry as a user message followed by an assistant message.
    pub fn to_messages(&self) -> [Message; 2] {
        [
            Message::user(self.user_text()),
            Message::assistant(self.assistant_text()),
        ]
    }

    pub fn token_count(&self, tokenizer: &dyn Tokenizer) -> usize {
        tokenizer.count(self.user_text()) + tokenizer.count(self.assistant_text())
    }
}

/// A role-tagged prompt message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

/// Flattens entries into alternating user/assistant messages.
pub fn flatten_entries<'a>(entries: impl IntoIterator<Item = &'a HistoryEntry>) -> Vec<Message> {
    entries.into_iter().flat_map(|e| e.to_messages()).collect()
}
