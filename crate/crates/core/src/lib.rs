//! Windowed, asynchronous condensation of multi-turn chat history.
//!
//! The crate is organised around the conversation state machine in
//! [`session`]: replies accumulate as raw exchange pairs, and every `w`
//! entries a background job condenses them into one pair that replaces the
//! window once it is ready. [`decider`] gates those jobs and [`condenser`]
//! runs them; [`middleware`] runs them off-thread for live chat loops.
//! [`client`] talks to OpenAI-compatible endpoints, [`perturb`] builds
//! robustness variants of transcripts and [`harness`] replays transcripts
//! under the competing history strategies.

pub mod backend;
pub mod client;
pub mod condenser;
pub mod decider;
pub mod harness;
pub mod history;
pub mod middleware;
pub mod perturb;
pub mod session;
pub mod tokenizer;

pub use backend::{BackendCompletion, BackendError, CompletionBackend, GenerationParams};
pub use condenser::{Condenser, CondenserParams, ExemplarSet, PromptStyle, WindowCondenser};
pub use decider::{Decider, DeciderVerdict, Decision};
pub use harness::{
    compare_runs, run_session, run_transcripts, RunContext, RunReport, Strategy, StrategyKind,
    Transcript, TurnRecord,
};
pub use history::{CondensedPair, ExchangePair, HistoryEntry, Message, Role, Turn};
pub use middleware::{CondensingSession, ReplyEffect};
pub use perturb::{PerturbKind, PerturbSpec};
pub use session::{
    CondensationJob, JobOutcome, JobStatus, SessionError, SessionState, TriggerRequest,
    WindowConfig,
};
pub use tokenizer::{default_token_count, Tokenizer, WhitespaceTokenizer};
