use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{ChatModel, ReplyContext};
use super::report::RunReport;
use super::score_exact_match;
use super::strategy::{Strategy, StrategyError, StrategyKind};
use super::transcript::{Scoring, Transcript};
use super::ttft::TtftModel;
use crate::backend::CompletionBackend;
use crate::condenser::{Condenser, CondenserParams, ExemplarSet, WindowCondenser};
use crate::decider::{Decider, DeciderVerdict};
use crate::history::{flatten_entries, ExchangePair, HistoryEntry, Message, Turn};
use crate::session::{JobStatus, SessionState};
use crate::tokenizer::{Tokenizer, WhitespaceTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondensationEvent {
    /// A job was admitted and sent to the condenser.
    Triggered,
    /// A condensed pair replaced its window in this turn's prompt.
    Integrated,
    /// The decider declined to condense.
    Withheld,
    /// The admitted job produced no usable pair.
    Failed,
}

impl CondensationEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            CondensationEvent::Triggered => "triggered",
            CondensationEvent::Integrated => "integrated",
            CondensationEvent::Withheld => "withheld",
            CondensationEvent::Failed => "failed",
        }
    }
}

/// Everything measured for one replayed turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: usize,
    /// History part of the prompt, current user turn excluded.
    pub prompt_history_tokens: usize,
    /// History plus the current user turn.
    pub prompt_tokens: usize,
    /// History entries in the prompt, a condensed entry counting as one.
    pub history_entries: usize,
    pub background_tokens_in: usize,
    pub background_tokens_out: usize,
    pub decider_verdict: Option<DeciderVerdict>,
    /// In order of occurrence; integration happens before the reply,
    /// triggering after it.
    pub condensation_events: Vec<CondensationEvent>,
    pub assistant_text: String,
    pub estimated_ttft_seconds: f64,
}

impl TurnRecord {
    pub fn background_tokens(&self) -> usize {
        self.background_tokens_in + self.background_tokens_out
    }

    pub fn has_event(&self, event: CondensationEvent) -> bool {
        self.condensation_events.contains(&event)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRun {
    pub transcript_id: String,
    pub repeat: usize,
    pub records: Vec<TurnRecord>,
    /// Set when a client error cut the session short; `records` then holds
    /// the turns completed before it.
    pub aborted: Option<String>,
    pub exact_match: Option<bool>,
}

impl SessionRun {
    pub fn history_tokens(&self) -> usize {
        self.records.iter().map(|r| r.prompt_history_tokens).sum()
    }

    pub fn background_tokens(&self) -> usize {
        self.records.iter().map(TurnRecord::background_tokens).sum()
    }

    pub fn total_tokens_with_background(&self) -> usize {
        self.history_tokens() + self.background_tokens()
    }

    pub fn was_withheld(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.has_event(CondensationEvent::Withheld))
    }

    pub fn was_condensed(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.has_event(CondensationEvent::Triggered))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("ttft model needs a positive slope")]
    InvalidTtft,
    #[error("repeats must be at least 1")]
    ZeroRepeats,
    #[error("building worker pool: {0}")]
    Pool(String),
}

/// Models, tokenizer and condenser settings shared by every session of a run.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub chat: &'a dyn ChatModel,
    pub condenser_backend: &'a dyn CompletionBackend,
    pub tokenizer: &'a dyn Tokenizer,
    pub ttft: TtftModel,
    pub condenser_params: &'a CondenserParams,
    pub exemplars: &'a ExemplarSet,
    pub decider: Decider<'a>,
}

impl<'a> RunContext<'a> {
    /// Whitespace tokenizer, default TTFT model, condenser settings and
    /// exemplars.
    pub fn new(chat: &'a dyn ChatModel, condenser_backend: &'a dyn CompletionBackend) -> Self {
        static PARAMS: std::sync::OnceLock<CondenserParams> = std::sync::OnceLock::new();
        static EXEMPLARS: std::sync::OnceLock<ExemplarSet> = std::sync::OnceLock::new();
        Self {
            chat,
            condenser_backend,
            tokenizer: &WhitespaceTokenizer,
            ttft: TtftModel::default(),
            condenser_params: PARAMS.get_or_init(CondenserParams::default),
            exemplars: EXEMPLARS.get_or_init(ExemplarSet::default),
            decider: Decider::default(),
        }
    }
}

/// Replays one transcript. Client failures end the session early and are
/// recorded in [`SessionRun::aborted`] rather than returned.
pub fn run_session(
    transcript: &Transcript,
    strategy: &Strategy,
    ctx: &RunContext<'_>,
) -> Result<SessionRun, RunError> {
    strategy.validate()?;
    if !ctx.ttft.is_valid() {
        return Err(RunError::InvalidTtft);
    }
    let mut records = Vec::with_capacity(transcript.user_turns.len());
    let outcome = if strategy.kind.condenses() {
        replay_condensing(transcript, strategy, ctx, &mut records)
    } else {
        replay_plain(transcript, strategy, ctx, &mut records)
    };
    let aborted = outcome.err();
    if let Some(reason) = &aborted {
        tracing::warn!(id = %transcript.id, %reason, "session aborted");
    }
    let exact_match = match (&transcript.scoring, &transcript.reference_answer, &aborted) {
        (Scoring::ExactMatch, Some(reference), None) => Some(
            records
                .last()
                .is_some_and(|r| score_exact_match(&r.assistant_text, reference)),
        ),
        (Scoring::ExactMatch, Some(_), Some(_)) => Some(false),
        _ => None,
    };
    Ok(SessionRun {
        transcript_id: transcript.id.clone(),
        repeat: 0,
        records,
        aborted,
        exact_match,
    })
}

fn record(
    ctx: &RunContext<'_>,
    turn_index: usize,
    history_tokens: usize,
    user_text: &str,
    history_entries: usize,
) -> TurnRecord {
    let prompt_tokens = history_tokens + ctx.tokenizer.count(user_text);
    TurnRecord {
        turn_index,
        prompt_history_tokens: history_tokens,
        prompt_tokens,
        history_entries,
        background_tokens_in: 0,
        background_tokens_out: 0,
        decider_verdict: None,
        condensation_events: Vec::new(),
        assistant_text: String::new(),
        estimated_ttft_seconds: ctx.ttft.estimate(prompt_tokens),
    }
}

fn at<E: std::fmt::Display>(turn: usize) -> impl Fn(E) -> String {
    move |e| format!("turn {turn}: {e}")
}

fn replay_plain(
    transcript: &Transcript,
    strategy: &Strategy,
    ctx: &RunContext<'_>,
    records: &mut Vec<TurnRecord>,
) -> Result<(), String> {
    let tok = ctx.tokenizer;
    let mut history: VecDeque<HistoryEntry> = VecDeque::new();
    for (i, text) in transcript.user_turns.iter().enumerate() {
        let turn_index = i + 1;
        if strategy.kind == StrategyKind::Fifo {
            while history.len() > strategy.fifo_limit {
                history.pop_front();
            }
        }
        let mut messages = flatten_entries(&history);
        messages.push(Message::user(text.clone()));
        let history_tokens = history.iter().map(|e| e.token_count(tok)).sum();
        let mut rec = record(ctx, turn_index, history_tokens, text, history.len());
        let reply = ctx
            .chat
            .reply(
                &messages,
                &ReplyContext {
                    transcript_id: &transcript.id,
                    turn_index,
                },
            )
            .map_err(at(turn_index))?;
        history.push_back(HistoryEntry::Raw(ExchangePair::new(
            turn_index,
            Turn::user(text.clone(), tok),
            Turn::assistant(reply.text.clone(), tok),
        )));
        rec.assistant_text = reply.text;
        records.push(rec);
    }
    Ok(())
}

fn replay_condensing(
    transcript: &Transcript,
    strategy: &Strategy,
    ctx: &RunContext<'_>,
    records: &mut Vec<TurnRecord>,
) -> Result<(), String> {
    let tok = ctx.tokenizer;
    let config = &strategy.window_config;
    let mut session = SessionState::new(config.clone()).map_err(|e| e.to_string())?;
    let condenser = Condenser::new(ctx.condenser_backend)
        .with_params(ctx.condenser_params.clone())
        .with_exemplars(ctx.exemplars.clone())
        .with_style(strategy.kind.prompt_style());
    for (i, text) in transcript.user_turns.iter().enumerate() {
        let turn_index = i + 1;
        session
            .begin_user_turn(text.clone(), tok)
            .map_err(at(turn_index))?;
        let integrated_before = session.integrated_count();
        let messages = session.build_prompt_history().map_err(at(turn_index))?;
        let mut rec = record(
            ctx,
            turn_index,
            session.history_token_count(tok),
            text,
            session.entries().len(),
        );
        if session.integrated_count() > integrated_before {
            rec.condensation_events.push(CondensationEvent::Integrated);
        }
        let reply = ctx
            .chat
            .reply(
                &messages,
                &ReplyContext {
                    transcript_id: &transcript.id,
                    turn_index,
                },
            )
            .map_err(at(turn_index))?;
        let trigger = session
            .complete_assistant_reply(reply.text.clone(), tok)
            .map_err(at(turn_index))?;
        rec.assistant_text = reply.text;

        if let Some(trigger) = trigger {
            let verdict = ctx
                .decider
                .decide_scoped(&trigger.window, session.entries(), config, tok)
                .map_err(at(turn_index))?;
            rec.decider_verdict = Some(verdict.clone());
            if session.admit_trigger(&trigger, verdict) {
                rec.condensation_events.push(CondensationEvent::Triggered);
                let report = condenser.condense(&trigger, tok);
                rec.background_tokens_in = report.input_tokens;
                rec.background_tokens_out = report.output_tokens;
                let status = session
                    .finish_job(report.into_outcome(trigger.trigger_turn))
                    .map_err(at(turn_index))?;
                if status == JobStatus::Failed {
                    rec.condensation_events.push(CondensationEvent::Failed);
                }
            } else {
                rec.condensation_events.push(CondensationEvent::Withheld);
            }
        }
        records.push(rec);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Sessions replayed in parallel; 0 lets the pool decide.
    pub concurrency: usize,
    /// Replays per transcript.
    pub repeats: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            concurrency: 0,
            repeats: 1,
        }
    }
}

/// Replays every transcript `repeats` times, sessions in parallel, and
/// collects the report. Session order follows transcript order, then repeat.
pub fn run_transcripts(
    transcripts: &[Transcript],
    strategy: &Strategy,
    ctx: &RunContext<'_>,
    options: RunOptions,
) -> Result<RunReport, RunError> {
    strategy.validate()?;
    if options.repeats == 0 {
        return Err(RunError::ZeroRepeats);
    }
    let jobs: Vec<(usize, &Transcript)> = transcripts
        .iter()
        .flat_map(|t| (0..options.repeats).map(move |r| (r, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.concurrency)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let sessions = pool.install(|| {
        jobs.par_iter()
            .map(|(repeat, t)| {
                run_session(t, strategy, ctx).map(|mut s| {
                    s.repeat = *repeat;
                    s
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(RunReport::new(strategy.clone(), sessions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, FailingBackend};
    use crate::condenser::MockCondenserBackend;
    use crate::harness::synthetic::synthetic_transcript;
    use crate::harness::MockChatModel;
    use crate::session::WindowConfig;

    fn curve(run: &SessionRun) -> Vec<usize> {
        run.records
            .iter()
            .map(|r| r.prompt_history_tokens)
            .collect()
    }

    #[test]
    fn token_curves() {
        let chat = MockChatModel::default();
        let backend = MockCondenserBackend::fixed(20, 60);
        let ctx = RunContext::new(&chat, &backend);
        let t = synthetic_transcript("s", 10, 50);
        let base = run_session(&t, &Strategy::baseline(), &ctx).unwrap();
        assert_eq!(curve(&base), (0..10).map(|i| i * 200).collect::<Vec<_>>());
        let osc = run_session(&t, &Strategy::mt_osc(WindowConfig::default()), &ctx).unwrap();
        assert_eq!(
            curve(&osc),
            vec![0, 200, 400, 600, 800, 280, 480, 680, 280, 480]
        );
        let fifo = run_session(&t, &Strategy::fifo(4), &ctx).unwrap();
        assert_eq!(
            curve(&fifo),
            vec![0, 200, 400, 600, 800, 800, 800, 800, 800, 800]
        );
        assert!(base.records.iter().all(|r| r.background_tokens() == 0));
        assert!(fifo.records.iter().all(|r| r.background_tokens() == 0));
    }

    #[test]
    fn events_follow_schedule() {
        let chat = MockChatModel::default();
        let backend = MockCondenserBackend::fixed(20, 60);
        let ctx = RunContext::new(&chat, &backend);
        let t = synthetic_transcript("s", 9, 50);
        let run = run_session(&t, &Strategy::mt_osc(WindowConfig::default()), &ctx).unwrap();
        let events: Vec<_> = run
            .records
            .iter()
            .map(|r| r.condensation_events.clone())
            .collect();
        use CondensationEvent::*;
        assert_eq!(events[3], vec![Triggered]);
        assert_eq!(events[5], vec![Integrated]);
        assert_eq!(events[6], vec![Triggered]);
        assert_eq!(events[8], vec![Integrated]);
        assert!(run.records[3].background_tokens_in > 0);
        assert!(run.records[3].background_tokens_out > 0);
        assert_eq!(run.records[4].background_tokens(), 0);
    }

    #[test]
    fn failing_condenser_matches_baseline() {
        let chat = MockChatModel::default();
        let ctx = RunContext::new(&chat, &FailingBackend);
        let t = synthetic_transcript("s", 12, 50);
        let base = run_session(&t, &Strategy::baseline(), &ctx).unwrap();
        let osc = run_session(&t, &Strategy::mt_osc(WindowConfig::default()), &ctx).unwrap();
        assert_eq!(curve(&base), curve(&osc));
        assert!(osc.records[4].has_event(CondensationEvent::Failed));
    }

    struct FlakyChat;
    impl ChatModel for FlakyChat {
        fn reply(
            &self,
            m: &[Message],
            ctx: &ReplyContext<'_>,
        ) -> Result<super::super::ChatReply, BackendError> {
            if ctx.turn_index == 3 {
                return Err(BackendError::Transport("down".into()));
            }
            MockChatModel::default().reply(m, ctx)
        }
    }

    #[test]
    fn client_error_leaves_partial_records() {
        let backend = MockCondenserBackend::fixed(20, 60);
        let ctx = RunContext::new(&FlakyChat, &backend);
        let t = synthetic_transcript("s", 6, 50).with_reference("never");
        let run = run_session(&t, &Strategy::baseline(), &ctx).unwrap();
        assert_eq!(run.records.len(), 2);
        assert!(run.aborted.as_deref().unwrap().contains("turn 3"));
        assert_eq!(run.exact_match, Some(false));
    }

    #[test]
    fn invalid_strategy_rejected() {
        let chat = MockChatModel::default();
        let ctx = RunContext::new(&chat, &FailingBackend);
        let t = synthetic_transcript("s", 2, 5);
        assert!(run_session(&t, &Strategy::fifo(0), &ctx).is_err());
        assert!(run_session(&t, &Strategy::mt_osc(WindowConfig::with_window(1)), &ctx).is_err());
    }

    #[test]
    fn parallel_run_preserves_order_and_repeats() {
        let chat = MockChatModel::default();
        let backend = MockCondenserBackend::fixed(20, 60);
        let ctx = RunContext::new(&chat, &backend);
        let ts: Vec<_> = (0..5)
            .map(|i| synthetic_transcript(format!("t{i}"), 6, 50))
            .collect();
        let opts = RunOptions {
            concurrency: 3,
            repeats: 2,
        };
        let report = run_transcripts(&ts, &Strategy::baseline(), &ctx, opts).unwrap();
        let order: Vec<_> = report
            .sessions
            .iter()
            .map(|s| (s.transcript_id.as_str(), s.repeat))
            .collect();
        assert_eq!(order[..3], [("t0", 0), ("t0", 1), ("t1", 0)]);
        assert_eq!(report.sessions.len(), 10);
        let zero = RunOptions { repeats: 0, ..opts };
        assert_eq!(
            run_transcripts(&ts, &Strategy::baseline(), &ctx, zero).unwrap_err(),
            RunError::ZeroRepeats
        );
    }
}
