//! One-off sequential condensation state machine.
//!
//! A session accumulates raw exchange pairs. When the live history reaches
//! `w` entries (a condensed entry counts as one) and no job is outstanding,
//! completing a reply yields a [`TriggerRequest`] over the first `w` entries.
//! The caller runs the decider and the condenser, then reports the outcome.
//! A ready result is swapped in at the first prompt whose turn index is at
//! least `trigger_turn + integration_delay_turns + 1`; entries appended after
//! the trigger stay raw behind the new condensed entry.
//!
//! With `w = 4` and a one-turn delay this produces:
//!
//! ```text
//! H5 = p1 p2 p3 p4        (C1 in flight)
//! H6 = C1 p5
//! H8 = C1 p5 p6 p7        (C2 in flight)
//! H9 = C2 p8
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decider::{DeciderVerdict, Decision, OverlapMode, TauScope};
use crate::history::{flatten_entries, CondensedPair, ExchangePair, HistoryEntry, Message, Turn};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("a user turn is already open and awaiting a reply")]
    AlreadyOpenTurn,
    #[error("no user turn is open")]
    NoOpenTurn,
    #[error("no ready condensation job to integrate")]
    NotReady,
    #[error(
        "session history no longer begins with the condensation window of turn {trigger_turn}"
    )]
    StaleJob { trigger_turn: usize },
    #[error("no outstanding job was triggered at turn {0}")]
    UnknownJob(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("window size must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("gamma must lie in [0, 1], got {0}")]
    GammaOutOfRange(f64),
    #[error("integration delay must be at least 1 turn, got {0}")]
    DelayTooSmall(usize),
}

/// Condensation window and decider settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Entries condensed per operation.
    pub w: usize,
    /// Overlap threshold; withholding requires overlap strictly above it.
    pub gamma: f64,
    /// User-token threshold; withholding requires a total strictly above it.
    pub tau: usize,
    pub integration_delay_turns: usize,
    pub decider_enabled: bool,
    pub tau_scope: TauScope,
    pub overlap_mode: OverlapMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            w: 4,
            gamma: 0.2,
            tau: 1000,
            integration_delay_turns: 1,
            decider_enabled: true,
            tau_scope: TauScope::Window,
            overlap_mode: OverlapMode::SharedMass,
        }
    }
}

impl WindowConfig {
    pub fn with_window(w: usize) -> Self {
        Self {
            w,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.w < 2 {
            return Err(ConfigError::WindowTooSmall(self.w));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ConfigError::GammaOutOfRange(self.gamma));
        }
        if self.integration_delay_turns < 1 {
            return Err(ConfigError::DelayTooSmall(self.integration_delay_turns));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Ready,
    Failed,
    Withheld,
}

/// Request to condense the first `w` entries of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRequest {
    /// Copy of the entries at trigger time.
    pub window: Vec<HistoryEntry>,
    /// Turn whose reply completed the window.
    pub trigger_turn: usize,
    /// `j` for the condensed pair this job would produce.
    pub generation_index: usize,
}

impl TriggerRequest {
    pub fn covers_from(&self) -> usize {
        self.window.first().map_or(0, HistoryEntry::first_turn)
    }

    pub fn covers_to(&self) -> usize {
        self.window.last().map_or(0, HistoryEntry::last_turn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensationJob {
    pub input_window: Vec<HistoryEntry>,
    pub trigger_turn: usize,
    pub generation_index: usize,
    pub status: JobStatus,
    pub result: Option<CondensedPair>,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub verdict: Option<DeciderVerdict>,
    pub failure: Option<String>,
}

/// What a finished background job reports back to its session.
#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub trigger_turn: usize,
    pub result: Result<CondensedPair, String>,
    pub input_tokens: usize,
    pub output_tokens: usize,
}

/// Live history of one conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    entries: Vec<HistoryEntry>,
    pending_job: Option<CondensationJob>,
    config: WindowConfig,
    decider_withheld_at: Vec<usize>,
    next_generation_index: usize,
    current_user_turn: Option<Turn>,
    completed_turns: usize,
    integrated_count: usize,
}

impl SessionState {
    pub fn new(config: WindowConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            entries: Vec::new(),
            pending_job: None,
            config,
            decider_withheld_at: Vec::new(),
            next_generation_index: 1,
            current_user_turn: None,
            completed_turns: 0,
            integrated_count: 0,
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn pending_job(&self) -> Option<&CondensationJob> {
        self.pending_job.as_ref()
    }

    pub fn current_user_turn(&self) -> Option<&Turn> {
        self.current_user_turn.as_ref()
    }

    pub fn decider_withheld_at(&self) -> &[usize] {
        &self.decider_withheld_at
    }

    pub fn next_generation_index(&self) -> usize {
        self.next_generation_index
    }

    /// Number of condensations that have been swapped into the history.
    pub fn integrated_count(&self) -> usize {
        self.integrated_count
    }

    /// Index of the open turn, or of the next turn when none is open.
    pub fn current_turn_index(&self) -> usize {
        self.completed_turns + 1
    }

    pub fn begin_user_turn(
        &mut self,
        text: impl Into<String>,
        tokenizer: &dyn Tokenizer,
    ) -> Result<(), SessionError> {
        if self.current_user_turn.is_some() {
            return Err(SessionError::AlreadyOpenTurn);
        }
        self.current_user_turn = Some(Turn::user(text, tokenizer));
        Ok(())
    }

    /// Messages to send for the open turn: history followed by the user turn.
    ///
    /// Integrates a ready job first when the integration boundary is reached.
    pub fn build_prompt_history(&mut self) -> Result<Vec<Message>, SessionError> {
        let Some(current) = self.current_user_turn.as_ref() else {
            return Err(SessionError::NoOpenTurn);
        };
        let current = Message::user(current.text.clone());
        if self.integration_due() {
            self.integrate_ready_job()?;
        }
        let mut messages = flatten_entries(&self.entries);
        messages.push(current);
        Ok(messages)
    }

    fn integration_due(&self) -> bool {
        self.pending_job.as_ref().is_some_and(|job| {
            job.status == JobStatus::Ready
                && self.current_turn_index()
                    > job.trigger_turn + self.config.integration_delay_turns
        })
    }

    /// Closes the open turn with the assistant reply.
    ///
    /// A failed or withheld job is discarded here, so the trigger re-arms on
    /// every completed pair until a condensation succeeds.
    pub fn complete_assistant_reply(
        &mut self,
        text: impl Into<String>,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Option<TriggerRequest>, SessionError> {
        let user = self
            .current_user_turn
            .take()
            .ok_or(SessionError::NoOpenTurn)?;
        self.completed_turns += 1;
        let pair = ExchangePair::new(self.completed_turns, user, Turn::assistant(text, tokenizer));
        self.entries.push(HistoryEntry::Raw(pair));

        if self
            .pending_job
            .as_ref()
            .is_some_and(|j| matches!(j.status, JobStatus::Failed | JobStatus::Withheld))
        {
            self.pending_job = None;
        }
        if self.pending_job.is_some() || self.entries.len() < self.config.w {
            return Ok(None);
        }
        Ok(Some(TriggerRequest {
            window: self.entries[..self.config.w].to_vec(),
            trigger_turn: self.completed_turns,
            generation_index: self.next_generation_index,
        }))
    }

    /// Registers a trigger with the decider's verdict. Returns `true` when the
    /// caller should run the condenser, `false` when condensation is withheld.
    pub fn admit_trigger(&mut self, trigger: &TriggerRequest, verdict: DeciderVerdict) -> bool {
        let withheld = verdict.decision == Decision::Withhold;
        if withheld {
            self.decider_withheld_at.push(trigger.trigger_turn);
        }
        self.pending_job = Some(CondensationJob {
            input_window: trigger.window.clone(),
            trigger_turn: trigger.trigger_turn,
            generation_index: trigger.generation_index,
            status: if withheld {
                JobStatus::Withheld
            } else {
                JobStatus::Pending
            },
            result: None,
            input_tokens: 0,
            output_tokens: 0,
            verdict: Some(verdict),
            failure: None,
        });
        !withheld
    }

    /// Records the outcome of the outstanding job.
    pub fn finish_job(&mut self, outcome: JobOutcome) -> Result<JobStatus, SessionError> {
        let job = self
            .pending_job
            .as_mut()
            .filter(|j| j.trigger_turn == outcome.trigger_turn && j.status == JobStatus::Pending)
            .ok_or(SessionError::UnknownJob(outcome.trigger_turn))?;
        job.input_tokens = outcome.input_tokens;
        job.output_tokens = outcome.output_tokens;
        match outcome.result {
            Ok(pair) => {
                job.result = Some(pair);
                job.status = JobStatus::Ready;
            }
            Err(reason) => {
                job.failure = Some(reason);
                job.status = JobStatus::Failed;
            }
        }
        Ok(job.status)
    }

    /// Replaces the job's window with its condensed pair.
    pub fn integrate_ready_job(&mut self) -> Result<(), SessionError> {
        let job = self.pending_job.as_ref().ok_or(SessionError::NotReady)?;
        if job.status != JobStatus::Ready
            || self.current_turn_index()
                < job.trigger_turn + self.config.integration_delay_turns + 1
        {
            return Err(SessionError::NotReady);
        }
        let n = job.input_window.len();
        if self.entries.len() < n || self.entries[..n] != job.input_window[..] {
            return Err(SessionError::StaleJob {
                trigger_turn: job.trigger_turn,
            });
        }
        let Some(job) = self.pending_job.take() else {
            return Err(SessionError::NotReady);
        };
        let Some(pair) = job.result else {
            return Err(SessionError::NotReady);
        };
        self.entries
            .splice(..n, std::iter::once(HistoryEntry::Condensed(pair)));
        self.next_generation_index += 1;
        self.integrated_count += 1;
        Ok(())
    }

    /// Tokens in the history part of the prompt (the open user turn excluded).
    pub fn history_token_count(&self, tokenizer: &dyn Tokenizer) -> usize {
        self.entries.iter().map(|e| e.token_count(tokenizer)).sum()
    }
}
