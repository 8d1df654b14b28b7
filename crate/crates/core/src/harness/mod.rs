//! Transcript replay under competing history strategies.
//!
//! A run feeds each transcript's user turns to a chat model one at a time,
//! builds the prompt history the chosen [`Strategy`] dictates, and records
//! per-turn token usage, decider verdicts and condensation events.

mod model;
mod report;
mod run;
mod strategy;
mod sweep;
pub mod synthetic;
mod transcript;
mod ttft;

pub use model::{ChatModel, ChatReply, LiveChatModel, MockChatModel, ReplyContext};
pub use report::{
    compare_runs, emit_curve, emit_report, load_report, Aggregates, CompareError, ComparisonReport,
    CurvePoint, ReportError, ReportFormat, RunCurvePoint, RunReport, TranscriptComparison,
};
pub use run::{
    run_session, run_transcripts, CondensationEvent, RunContext, RunError, RunOptions, SessionRun,
    TurnRecord,
};
pub use strategy::{Strategy, StrategyError, StrategyKind};
pub use sweep::{decider_sweep, SweepCell, SweepError, SweepReport, DEFAULT_GAMMAS, DEFAULT_TAUS};
pub use transcript::{
    load_transcripts, read_transcripts, write_transcripts, Scoring, SkippedLine, Transcript,
    TranscriptError, TranscriptSet,
};
pub use ttft::{estimate_ttft, TtftModel};

/// True iff the trimmed, case-folded reference occurs in the answer.
pub fn score_exact_match(final_answer: &str, reference: &str) -> bool {
    let norm = |s: &str| s.trim().to_lowercase();
    norm(final_answer).contains(&norm(reference))
}
