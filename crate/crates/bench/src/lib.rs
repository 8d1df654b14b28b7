//! Fixtures shared by the benchmarks in `benches/`.

use chatcondense_core::{ExchangePair, HistoryEntry, Turn, WhitespaceTokenizer};

/// `pairs` raw entries with `words` words per side, drawn from a small
/// vocabulary so assistant replies overlap.
pub fn window(pairs: usize, words: usize) -> Vec<HistoryEntry> {
    let tok = WhitespaceTokenizer;
    (1..=pairs)
        .map(|i| {
            let user: Vec<String> = (0..words).map(|k| format!("user{i}x{k}")).collect();
            let reply: Vec<String> = (0..words)
                .map(|k| format!("topic{}", (i * 7 + k * 3) % 97))
                .collect();
            HistoryEntry::Raw(ExchangePair::new(
                i,
                Turn::user(user.join(" "), &tok),
                Turn::assistant(reply.join(" "), &tok),
            ))
        })
        .collect()
}

pub const CONDENSER_REPLY: &str = "Sure, here is the result.\n```json\n{\"HumanInput\": \"Elvis starts at home and drives west for 5 hours, then turns around.\", \"Assistant\": \"Roughly 300 miles west at 60 mph; the distance shrinks once he heads east.\", \"Reasoning\": \"User facts kept verbatim, assistant estimates merged.\"}\n```\n";
