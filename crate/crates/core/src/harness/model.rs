use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, GenerationParams};
use crate::client::{ChatClient, ChatRequest};
use crate::history::Message;

/// Where in a replay a reply is being produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplyContext<'a> {
    pub transcript_id: &'a str,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: Option<usize>,
    pub completion_tokens: Option<usize>,
}

/// The main conversation model being replayed against.
pub trait ChatModel: Send + Sync {
    fn reply(
        &self,
        messages: &[Message],
        ctx: &ReplyContext<'_>,
    ) -> Result<ChatReply, BackendError>;
}

/// Deterministic replies of exactly `reply_tokens` words, drawn from a
/// vocabulary of `term<k>` words.
///
/// A reply depends only on the transcript id and turn index, never on the
/// prompt, so every strategy sees the same assistant turns. The vocabulary
/// size is `vocab` plus a per-transcript offset in `0..=vocab_spread`;
/// smaller vocabularies make replies overlap more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockChatModel {
    pub reply_tokens: usize,
    pub vocab: usize,
    pub vocab_spread: usize,
}

impl Default for MockChatModel {
    fn default() -> Self {
        Self {
            reply_tokens: 150,
            vocab: 400,
            vocab_spread: 0,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl MockChatModel {
    pub fn vocab_for(&self, transcript_id: &str) -> usize {
        let offset = fnv1a(transcript_id.as_bytes()) % (self.vocab_spread as u64 + 1);
        (self.vocab + offset as usize).max(1)
    }

    pub fn text_for(&self, ctx: &ReplyContext<'_>) -> String {
        let vocab = self.vocab_for(ctx.transcript_id);
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(ctx.transcript_id.as_bytes()));
        rng.set_stream(ctx.turn_index as u64);
        (0..self.reply_tokens)
            .map(|_| format!("term{}", rng.random_range(0..vocab)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl ChatModel for MockChatModel {
    fn reply(&self, _: &[Message], ctx: &ReplyContext<'_>) -> Result<ChatReply, BackendError> {
        Ok(ChatReply {
            text: self.text_for(ctx),
            prompt_tokens: None,
            completion_tokens: Some(self.reply_tokens),
        })
    }
}

/// Chat model served over an OpenAI-compatible endpoint.
#[derive(Debug)]
pub struct LiveChatModel {
    client: ChatClient,
    params: GenerationParams,
}

impl LiveChatModel {
    pub fn new(client: ChatClient, params: GenerationParams) -> Self {
        Self { client, params }
    }
}

impl ChatModel for LiveChatModel {
    fn reply(&self, messages: &[Message], _: &ReplyContext<'_>) -> Result<ChatReply, BackendError> {
        let c = self
            .client
            .chat_complete(&ChatRequest::new(messages, &self.params))?;
        Ok(ChatReply {
            text: c.text,
            prompt_tokens: c.prompt_tokens,
            completion_tokens: c.completion_tokens,
        })
    }
}
