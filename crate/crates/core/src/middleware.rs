//! Session wrapper for live chat loops, with condensation on a worker thread.
//!
//! The owning thread drives [`CondensingSession`]: `prompt_for` before each
//! model call and `record_reply` after it. Triggered jobs run on their own
//! thread and hand their outcome back over a channel; the session picks it up
//! at the next prompt and integrates it once the turn boundary allows.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;

use thiserror::Error;

use crate::condenser::WindowCondenser;
use crate::decider::{Decider, DeciderError, DeciderVerdict, Decision};
use crate::history::Message;
use crate::session::{
    ConfigError, JobOutcome, JobStatus, SessionError, SessionState, TriggerRequest, WindowConfig,
};
use crate::tokenizer::SharedTokenizer;

/// A condensation running on a worker thread.
pub struct JobHandle {
    trigger_turn: usize,
    rx: Receiver<JobOutcome>,
    cancelled: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for JobHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JobHandle")
            .field("trigger_turn", &self.trigger_turn)
            .finish_non_exhaustive()
    }
}

pub fn spawn_condensation(
    condenser: Arc<dyn WindowCondenser>,
    trigger: TriggerRequest,
    tokenizer: SharedTokenizer,
) -> JobHandle {
    let (tx, rx) = mpsc::channel();
    let cancelled = Arc::new(AtomicBool::new(false));
    let trigger_turn = trigger.trigger_turn;
    let flag = Arc::clone(&cancelled);
    let worker = std::thread::spawn(move || {
        let report = condenser.condense(&trigger, &tokenizer);
        if !flag.load(Ordering::Acquire) {
            let _ = tx.send(report.into_outcome(trigger.trigger_turn));
        }
    });
    JobHandle {
        trigger_turn,
        rx,
        cancelled,
        worker: Some(worker),
    }
}

impl JobHandle {
    pub fn trigger_turn(&self) -> usize {
        self.trigger_turn
    }

    fn lost(&self) -> JobOutcome {
        JobOutcome {
            trigger_turn: self.trigger_turn,
            result: Err("condensation worker stopped without a result".into()),
            input_tokens: 0,
            output_tokens: 0,
        }
    }

    /// The outcome if the worker has finished.
    pub fn try_outcome(&mut self) -> Option<JobOutcome> {
        match self.rx.try_recv() {
            Ok(outcome) => Some(outcome),
            Err(TryRecvError::Empty) => None,
            Err(TryRecvError::Disconnected) => Some(self.lost()),
        }
    }

    pub fn wait(mut self) -> JobOutcome {
        let outcome = self.rx.recv().unwrap_or_else(|_| self.lost());
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
        outcome
    }

    /// Detaches the worker; its result will be dropped.
    pub fn cancel(self) {
        self.cancelled.store(true, Ordering::Release);
    }
}

#[derive(Debug, Error)]
pub enum MiddlewareError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Decider(#[from] DeciderError),
}

/// What recording a reply set in motion.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplyEffect {
    None,
    Withheld(DeciderVerdict),
    Spawned(DeciderVerdict),
}

pub struct CondensingSession {
    state: SessionState,
    condenser: Arc<dyn WindowCondenser>,
    tokenizer: SharedTokenizer,
    decider: Decider<'static>,
    in_flight: Option<JobHandle>,
}

impl CondensingSession {
    pub fn new(
        config: WindowConfig,
        condenser: Arc<dyn WindowCondenser>,
    ) -> Result<Self, ConfigError> {
        Ok(Self {
            state: SessionState::new(config)?,
            condenser,
            tokenizer: SharedTokenizer::default(),
            decider: Decider::default(),
            in_flight: None,
        })
    }

    pub fn with_tokenizer(mut self, tokenizer: SharedTokenizer) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn has_job_in_flight(&self) -> bool {
        self.in_flight.is_some()
    }

    fn collect(&mut self, outcome: JobOutcome) -> Result<JobStatus, SessionError> {
        self.in_flight = None;
        self.state.finish_job(outcome)
    }

    fn poll(&mut self) -> Result<(), SessionError> {
        if let Some(outcome) = self.in_flight.as_mut().and_then(JobHandle::try_outcome) {
            self.collect(outcome)?;
        }
        Ok(())
    }

    /// Opens the user turn and returns the messages to send for it.
    pub fn prompt_for(
        &mut self,
        user_text: impl Into<String>,
    ) -> Result<Vec<Message>, SessionError> {
        self.poll()?;
        self.state.begin_user_turn(user_text, &self.tokenizer)?;
        self.state.build_prompt_history()
    }

    /// Closes the open turn with the model's reply and starts a background
    /// condensation if the window is full and the decider allows it.
    pub fn record_reply(
        &mut self,
        reply: impl Into<String>,
    ) -> Result<ReplyEffect, MiddlewareError> {
        self.poll()?;
        let Some(trigger) = self
            .state
            .complete_assistant_reply(reply, &self.tokenizer)?
        else {
            return Ok(ReplyEffect::None);
        };
        let verdict = self.decider.decide_scoped(
            &trigger.window,
            self.state.entries(),
            self.state.config(),
            &self.tokenizer,
        )?;
        if !self.state.admit_trigger(&trigger, verdict.clone()) {
            debug_assert_eq!(verdict.decision, Decision::Withhold);
            return Ok(ReplyEffect::Withheld(verdict));
        }
        self.in_flight = Some(spawn_condensation(
            Arc::clone(&self.condenser),
            trigger,
            self.tokenizer.clone(),
        ));
        Ok(ReplyEffect::Spawned(verdict))
    }

    /// Blocks until the in-flight job, if any, has reported back.
    pub fn wait_for_background(&mut self) -> Result<Option<JobStatus>, SessionError> {
        match self.in_flight.take() {
            Some(handle) => {
                let outcome = handle.wait();
                self.collect(outcome).map(Some)
            }
            None => Ok(None),
        }
    }
}

impl Drop for CondensingSession {
    fn drop(&mut self) {
        if let Some(handle) = self.in_flight.take() {
            handle.cancel();
        }
    }
}
