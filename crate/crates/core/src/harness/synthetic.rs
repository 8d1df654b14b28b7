//! Generated transcripts with controlled turn sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::MockChatModel;
use super::transcript::Transcript;

/// `turns` user turns of exactly `user_tokens` distinct words each.
pub fn synthetic_transcript(id: impl Into<String>, turns: usize, user_tokens: usize) -> Transcript {
    let user_turns = (1..=turns)
        .map(|t| {
            (0..user_tokens)
                .map(|k| format!("u{t}w{k}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let mut t = Transcript::new(id, user_turns);
    t.tags.push("synthetic".into());
    t
}

/// `n` ten-turn transcripts whose user turns range over 100..=1200 tokens,
/// so four-turn windows straddle the usual user-token thresholds.
pub fn sweep_suite(n: usize, seed: u64) -> Vec<Transcript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| synthetic_transcript(format!("sweep-{i}"), 10, rng.random_range(100..=1200)))
        .collect()
}

/// Reply model paired with [`sweep_suite`]: per-transcript vocabularies of
/// 400..=3000 words give window overlaps of roughly 0.1 to 0.5.
pub fn sweep_chat_model() -> MockChatModel {
    MockChatModel {
        reply_tokens: 150,
        vocab: 400,
        vocab_spread: 2600,
    }
}
