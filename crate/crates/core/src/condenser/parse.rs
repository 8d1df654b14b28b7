use serde_json::{Map, Value};
use thiserror::Error;

use crate::history::CondensedPair;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in condenser output")]
    NoJsonFound,
    #[error("condenser output is missing key {0:?}")]
    MissingKey(&'static str),
    #[error("condenser output has an empty {0:?}")]
    EmptyField(&'static str),
    #[error("condenser output key {0:?} is not a string")]
    WrongType(&'static str),
}

/// Condenser output before the job context is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCondensation {
    pub human_input: String,
    pub assistant_summary: String,
    pub reasoning: String,
}

impl ParsedCondensation {
    pub fn into_pair(
        self,
        covers_from: usize,
        covers_to: usize,
        generation_index: usize,
    ) -> CondensedPair {
        CondensedPair {
            human_input: self.human_input,
            assistant_summary: self.assistant_summary,
            reasoning: self.reasoning,
            covers_from,
            covers_to,
            generation_index,
        }
    }

    /// Serializes in the three-key condenser schema.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "HumanInput": self.human_input,
            "Assistant": self.assistant_summary,
            "Reasoning": self.reasoning,
        })
        .to_string()
    }
}

/// Extracts the first complete JSON object embedded in `text` and reads the
/// condenser keys from it. `Reasoning` is optional.
pub fn parse_condenser_output(text: &str) -> Result<ParsedCondensation, ParseError> {
    let object = first_json_object(text).ok_or(ParseError::NoJsonFound)?;
    from_object(&object)
}

/// Accepts only a bare JSON object, surrounding whitespace aside.
pub fn parse_strict(text: &str) -> Result<ParsedCondensation, ParseError> {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(map)) => from_object(&map),
        _ => Err(ParseError::NoJsonFound),
    }
}

fn from_object(map: &Map<String, Value>) -> Result<ParsedCondensation, ParseError> {
    let human_input = required(map, "HumanInput")?;
    let assistant_summary = required(map, "Assistant")?;
    let reasoning = match map.get("Reasoning") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    Ok(ParsedCondensation {
        human_input,
        assistant_summary,
        reasoning,
    })
}

fn required(map: &Map<String, Value>, key: &'static str) -> Result<String, ParseError> {
    match map.get(key) {
        None => Err(ParseError::MissingKey(key)),
        Some(Value::String(s)) if s.trim().is_empty() => Err(ParseError::EmptyField(key)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseError::WrongType(key)),
    }
}

/// Tries each `{` in order; the first balanced span that parses as a JSON
/// object wins.
fn first_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = bytes[start..].iter().position(|&b| b == b'{') {
        let open = start + offset;
        if let Some(close) = balanced_end(&bytes[open..]) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[open..=open + close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

/// Index of the `}` closing the `{` at `bytes[0]`, honouring string literals
/// and backslash escapes inside them.
fn balanced_end(bytes: &[u8]) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}
