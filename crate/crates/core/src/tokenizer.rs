//! Token counting.
//!
//! Reduction figures are ratios, so any deterministic counter works. The
//! default counts maximal runs of non-whitespace characters.

use std::fmt;
use std::sync::Arc;

/// Counts tokens in a piece of text.
///
/// Implementations must be deterministic and return 0 for the empty string.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-run tokenizer: one token per maximal non-whitespace run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        default_token_count(text)
    }
}

/// Counts maximal non-whitespace runs in `text`.
pub fn default_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

impl<T: Tokenizer + ?Sized> Tokenizer for Arc<T> {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

impl<T: Tokenizer + ?Sized> Tokenizer for &T {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

/// Shared handle to a tokenizer.
#[derive(Clone)]
pub struct SharedTokenizer(pub Arc<dyn Tokenizer>);

impl SharedTokenizer {
    pub fn new(tokenizer: impl Tokenizer + 'static) -> Self {
        Self(Arc::new(tokenizer))
    }
}

impl Default for SharedTokenizer {
    fn default() -> Self {
        Self::new(WhitespaceTokenizer)
    }
}

impl fmt::Debug for SharedTokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedTokenizer(..)")
    }
}

impl Tokenizer for SharedTokenizer {
    fn count(&self, text: &str) -> usize {
        self.0.count(text)
    }
}

/// Returns the prefix of `text` holding at most `max_tokens` whitespace-run
/// tokens, re-joined with single spaces.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}
