use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    #[default]
    None,
    ExactMatch,
}

/// One replayable conversation: user turns only, assistant replies are
/// generated during replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub user_turns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    #[serde(default)]
    pub scoring: Scoring,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl Transcript {
    pub fn new(id: impl Into<String>, user_turns: Vec<String>) -> Self {
        Self {
            id: id.into(),
            user_turns,
            reference_answer: None,
            scoring: Scoring::None,
            tags: Vec::new(),
        }
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference_answer = Some(reference.into());
        self.scoring = Scoring::ExactMatch;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id is empty".into());
        }
        if self.user_turns.is_empty() {
            return Err("user_turns is empty".into());
        }
        if self.scoring == Scoring::ExactMatch && self.reference_answer.is_none() {
            return Err("exact_match scoring requires reference_answer".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("reading transcripts: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriptSet {
    pub transcripts: Vec<Transcript>,
    /// Malformed lines dropped under the lenient flag.
    pub skipped: Vec<SkippedLine>,
}

/// Reads JSONL, one transcript per non-blank line. A malformed line fails the
/// read unless `lenient`, in which case it is skipped and reported.
pub fn read_transcripts(
    reader: impl BufRead,
    lenient: bool,
) -> Result<TranscriptSet, TranscriptError> {
    let mut set = TranscriptSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Transcript>(&line)
            .map_err(|e| e.to_string())
            .and_then(|t| t.validate().map(|()| t));
        match parsed {
            Ok(t) => set.transcripts.push(t),
            Err(message) if lenient => {
                tracing::warn!(line = i + 1, %message, "skipping malformed transcript");
                set.skipped.push(SkippedLine {
                    line: i + 1,
                    message,
                });
            }
            Err(message) => {
                return Err(TranscriptError::Schema {
                    line: i + 1,
                    message,
                })
            }
        }
    }
    Ok(set)
}

pub fn load_transcripts(
    path: impl AsRef<Path>,
    lenient: bool,
) -> Result<TranscriptSet, TranscriptError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let set = read_transcripts(BufReader::new(file), lenient)?;
    if set.transcripts.is_empty() {
        tracing::warn!(path = %path.display(), "no transcripts loaded");
    }
    Ok(set)
}

pub fn write_transcripts(
    path: impl AsRef<Path>,
    transcripts: &[Transcript],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in transcripts {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
