//! Rule-based gate that withholds condensation of redundant, dense windows.
//!
//! Each assistant reply is reduced to its novel content words: the reply's
//! normalized words minus every user word seen up to that turn. Overlap is
//! the fraction of the union of novel sets that recurs in at least two
//! replies. A window is withheld when overlap exceeds `gamma` and its user
//! tokens exceed `tau`.

mod normalize;
mod stem;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize, NormalizedWordSet, Normalizer};

use crate::history::HistoryEntry;
use crate::session::WindowConfig;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeciderError {
    #[error("overlap needs at least 2 entries, got {0}")]
    WindowTooSmall(usize),
    #[error("window has {got} entries but the configured size is {expected}")]
    WindowSizeMismatch { expected: usize, got: usize },
    #[error("turn position {position} outside window of {len}")]
    PositionOutOfRange { position: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Condense,
    Withhold,
}

/// How overlap is aggregated over the novel-term sets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// `|terms in >= 2 sets| / |union|`.
    #[default]
    SharedMass,
    /// Mean Jaccard similarity over all pairs of sets.
    PairwiseAverage,
}

/// Which user turns count toward the `tau` threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauScope {
    /// Only the triggered window.
    #[default]
    Window,
    /// Every user turn in the session so far.
    FullHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeciderVerdict {
    pub decision: Decision,
    pub overlap: f64,
    pub user_tokens: usize,
    pub gamma: f64,
    pub tau: usize,
}

/// Decider bound to a normalization pipeline.
#[derive(Debug, Clone, Copy)]
pub struct Decider<'a> {
    normalizer: &'a Normalizer,
}

impl Default for Decider<'static> {
    fn default() -> Self {
        Self {
            normalizer: Normalizer::bundled(),
        }
    }
}

impl<'a> Decider<'a> {
    pub fn new(normalizer: &'a Normalizer) -> Self {
        Self { normalizer }
    }

    /// Novel assistant terms at 1-based `position`: the reply's words minus
    /// the user words of positions `1..=position`.
    pub fn assistant_novel_terms(
        &self,
        window: &[HistoryEntry],
        position: usize,
    ) -> Result<NormalizedWordSet, DeciderError> {
        if position == 0 || position > window.len() {
            return Err(DeciderError::PositionOutOfRange {
                position,
                len: window.len(),
            });
        }
        Ok(self
            .novel_sets(&window[..position])
            .pop()
            .unwrap_or_default())
    }

    fn novel_sets(&self, window: &[HistoryEntry]) -> Vec<NormalizedWordSet> {
        let users: Vec<NormalizedWordSet> = window
            .iter()
            .map(|e| self.normalizer.normalize(e.user_text()))
            .collect();
        window
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                self.normalizer
                    .normalize(entry.assistant_text())
                    .iter()
                    .filter(|w| !users[..=i].iter().any(|u| u.contains(w)))
                    .collect()
            })
            .collect()
    }

    pub fn window_overlap(
        &self,
        window: &[HistoryEntry],
        mode: OverlapMode,
    ) -> Result<f64, DeciderError> {
        if window.len() < 2 {
            return Err(DeciderError::WindowTooSmall(window.len()));
        }
        let sets = self.novel_sets(window);
        Ok(match mode {
            OverlapMode::SharedMass => shared_mass(&sets),
            OverlapMode::PairwiseAverage => pairwise_jaccard(&sets),
        })
    }

    pub fn decide(
        &self,
        window: &[HistoryEntry],
        config: &WindowConfig,
        tokenizer: &dyn Tokenizer,
    ) -> Result<DeciderVerdict, DeciderError> {
        self.decide_with_user_tokens(window, config, user_token_total(window, tokenizer))
    }

    /// Like [`Decider::decide`] with a caller-supplied user token total, used
    /// for [`TauScope::FullHistory`].
    pub fn decide_with_user_tokens(
        &self,
        window: &[HistoryEntry],
        config: &WindowConfig,
        user_tokens: usize,
    ) -> Result<DeciderVerdict, DeciderError> {
        if window.len() != config.w {
            return Err(DeciderError::WindowSizeMismatch {
                expected: config.w,
                got: window.len(),
            });
        }
        let overlap = self.window_overlap(window, config.overlap_mode)?;
        let withhold = config.decider_enabled && overlap > config.gamma && user_tokens > config.tau;
        Ok(DeciderVerdict {
            decision: if withhold {
                Decision::Withhold
            } else {
                Decision::Condense
            },
            overlap,
            user_tokens,
            gamma: config.gamma,
            tau: config.tau,
        })
    }

    /// Decides on a trigger window, counting user tokens over the window or
    /// over all of `history` as `config.tau_scope` says.
    pub fn decide_scoped(
        &self,
        window: &[HistoryEntry],
        history: &[HistoryEntry],
        config: &WindowConfig,
        tokenizer: &dyn Tokenizer,
    ) -> Result<DeciderVerdict, DeciderError> {
        let scope = match config.tau_scope {
            TauScope::Window => window,
            TauScope::FullHistory => history,
        };
        self.decide_with_user_tokens(window, config, user_token_total(scope, tokenizer))
    }
}

fn shared_mass(sets: &[NormalizedWordSet]) -> f64 {
    let mut union = NormalizedWordSet::new();
    for s in sets {
        union.extend_from(s);
    }
    if union.is_empty() {
        return 0.0;
    }
    let shared = union
        .iter()
        .filter(|w| sets.iter().filter(|s| s.contains(w)).count() >= 2)
        .count();
    shared as f64 / union.len() as f64
}

fn pairwise_jaccard(sets: &[NormalizedWordSet]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            pairs += 1;
            let inter = a.as_set().intersection(b.as_set()).count();
            let union = a.as_set().union(b.as_set()).count();
            if union > 0 {
                total += inter as f64 / union as f64;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Sum of user-side tokens in the window; condensed entries contribute their
/// human input.
pub fn user_token_total(window: &[HistoryEntry], tokenizer: &dyn Tokenizer) -> usize {
    window.iter().map(|e| tokenizer.count(e.user_text())).sum()
}

pub fn assistant_novel_terms(
    window: &[HistoryEntry],
    position: usize,
) -> Result<NormalizedWordSet, DeciderError> {
    Decider::default().assistant_novel_terms(window, position)
}

pub fn window_overlap(window: &[HistoryEntry]) -> Result<f64, DeciderError> {
    Decider::default().window_overlap(window, OverlapMode::SharedMass)
}

pub fn decide(
    window: &[HistoryEntry],
    config: &WindowConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<DeciderVerdict, DeciderError> {
    Decider::default().decide(window, config, tokenizer)
}
