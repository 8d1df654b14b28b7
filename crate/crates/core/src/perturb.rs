//! Seeded robustness variants of user-turn sequences.
//!
//! Randomness comes from ChaCha8 seeded with the spec's 64-bit seed; the
//! stream number selects an independent sequence (one per transcript when
//! perturbing a file), so output is reproducible across platforms.

use rand::seq::{index, IndexedRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendCompletion, BackendError, CompletionBackend, GenerationParams};
use crate::harness::Transcript;

pub const FILLER_WORDS: [&str; 6] = ["Um.", "Uh.", "Well.", "Anyway.", "Ok.", "Hmm."];

pub const DIVERSION_PROMPT: &str = "Can you come up with related but distracting information as new entry in user inputs, for example:

Input:
Check for availability of meeting rooms for next week.

Output:
Meeting rooms are often in high demand, especially during peak business hours. It's a good idea to consider alternative locations or virtual meeting options in case the preferred rooms are fully booked. Additionally, checking the amenities available in each room, such as video conferencing equipment or whiteboards, can help ensure that the meeting runs smoothly.

Make sure the added information is not helping make the instructions more clear.

Please respond only with the output without any extra explanations or text.

Here is the input to modify:
";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("{kind:?} needs at least {min} turns, got {len}")]
    TooShort {
        kind: PerturbKind,
        len: usize,
        min: usize,
    },
    #[error("cannot build a diversion prompt for a blank turn")]
    BlankTurn,
    #[error("ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("distractor generation failed: {0}")]
    Generator(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    RepetitionInfusion,
    FillerInjection,
    ContextualDiversion,
}

impl PerturbKind {
    pub fn min_len(self) -> usize {
        match self {
            PerturbKind::FillerInjection => 2,
            _ => 3,
        }
    }

    /// Short tag used in transcript ids and tags.
    pub fn tag(self) -> &'static str {
        match self {
            PerturbKind::RepetitionInfusion => "ri",
            PerturbKind::FillerInjection => "fi",
            PerturbKind::ContextualDiversion => "cd",
        }
    }
}

pub fn default_diversion_params() -> GenerationParams {
    GenerationParams {
        model_id: "gpt-4o".into(),
        temperature: 1.0,
        top_p: 0.75,
        frequency_penalty: None,
        max_tokens: 4096,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    /// Fraction of turns to perturb; ignored when `n_override` is set.
    pub ratio: f64,
    pub n_override: Option<usize>,
    pub seed: u64,
    pub diversion_params: Option<GenerationParams>,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, seed: u64) -> Self {
        Self {
            kind,
            ratio: 0.25,
            n_override: None,
            seed,
            diversion_params: (kind == PerturbKind::ContextualDiversion)
                .then(default_diversion_params),
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n_override = Some(n);
        self
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self
    }

    /// `n_override`, else `max(1, ceil(ratio * len))`.
    pub fn insertion_count(&self, len: usize) -> Result<usize, PerturbError> {
        if let Some(n) = self.n_override {
            return Ok(n);
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(PerturbError::InvalidRatio(self.ratio));
        }
        Ok(((self.ratio * len as f64 - 1e-9).ceil() as usize).max(1))
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Perturbed turns plus the output positions of inserted turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub turns: Vec<String>,
    pub inserted_at: Vec<usize>,
}

fn check_len(kind: PerturbKind, turns: &[String]) -> Result<(), PerturbError> {
    if turns.len() < kind.min_len() {
        return Err(PerturbError::TooShort {
            kind,
            len: turns.len(),
            min: kind.min_len(),
        });
    }
    Ok(())
}

/// Sorted distinct indices drawn from `lo..hi`, at most `n` of them.
fn select(rng: &mut ChaCha8Rng, lo: usize, hi: usize, n: usize) -> Vec<usize> {
    let pool = hi.saturating_sub(lo);
    let mut picked: Vec<usize> = index::sample(rng, pool, n.min(pool))
        .into_iter()
        .map(|i| i + lo)
        .collect();
    picked.sort_unstable();
    picked
}

/// Duplicates `n` distinct middle turns in place.
pub fn repetition_infusion(
    turns: &[String],
    spec: &PerturbSpec,
) -> Result<Perturbation, PerturbError> {
    repetition_infusion_stream(turns, spec, 0)
}

fn repetition_infusion_stream(
    turns: &[String],
    spec: &PerturbSpec,
    stream: u64,
) -> Result<Perturbation, PerturbError> {
    check_len(PerturbKind::RepetitionInfusion, turns)?;
    let n = spec.insertion_count(turns.len())?;
    let picked = select(&mut spec.rng(stream), 1, turns.len() - 1, n);
    let mut out = Perturbation {
        turns: Vec::with_capacity(turns.len() + picked.len()),
        inserted_at: Vec::with_capacity(picked.len()),
    };
    for (i, turn) in turns.iter().enumerate() {
        out.turns.push(turn.clone());
        if picked.binary_search(&i).is_ok() {
            out.inserted_at.push(out.turns.len());
            out.turns.push(turn.clone());
        }
    }
    Ok(out)
}

/// Inserts a random filler turn before `n` distinct non-first turns.
pub fn filler_injection(
    turns: &[String],
    spec: &PerturbSpec,
) -> Result<Perturbation, PerturbError> {
    filler_injection_stream(turns, spec, 0)
}

fn filler_injection_stream(
    turns: &[String],
    spec: &PerturbSpec,
    stream: u64,
) -> Result<Perturbation, PerturbError> {
    check_len(PerturbKind::FillerInjection, turns)?;
    let n = spec.insertion_count(turns.len())?;
    let mut rng = spec.rng(stream);
    let picked = select(&mut rng, 1, turns.len(), n);
    let mut out = Perturbation {
        turns: Vec::with_capacity(turns.len() + picked.len()),
        inserted_at: Vec::with_capacity(picked.len()),
    };
    for (i, turn) in turns.iter().enumerate() {
        if picked.binary_search(&i).is_ok() {
            let filler = FILLER_WORDS
                .choose(&mut rng)
                .expect("filler list is non-empty");
            out.inserted_at.push(out.turns.len());
            out.turns.push((*filler).to_string());
        }
        out.turns.push(turn.clone());
    }
    Ok(out)
}

pub fn build_diversion_prompt(turn_text: &str) -> Result<String, PerturbError> {
    if turn_text.trim().is_empty() {
        return Err(PerturbError::BlankTurn);
    }
    Ok(format!("{DIVERSION_PROMPT}{turn_text}"))
}

/// Adds a generated distractor after `n` distinct middle turns, skipping
/// blank ones. Any generator failure aborts the whole transcript.
pub fn contextual_diversion(
    turns: &[String],
    spec: &PerturbSpec,
    generator: &dyn CompletionBackend,
) -> Result<Perturbation, PerturbError> {
    contextual_diversion_stream(turns, spec, generator, 0)
}

fn contextual_diversion_stream(
    turns: &[String],
    spec: &PerturbSpec,
    generator: &dyn CompletionBackend,
    stream: u64,
) -> Result<Perturbation, PerturbError> {
    check_len(PerturbKind::ContextualDiversion, turns)?;
    let n = spec.insertion_count(turns.len())?;
    let picked = select(&mut spec.rng(stream), 1, turns.len() - 1, n);
    let params = spec
        .diversion_params
        .clone()
        .unwrap_or_else(default_diversion_params);
    let mut out = Perturbation {
        turns: Vec::with_capacity(turns.len() + picked.len()),
        inserted_at: Vec::with_capacity(picked.len()),
    };
    for (i, turn) in turns.iter().enumerate() {
        out.turns.push(turn.clone());
        if picked.binary_search(&i).is_ok() && !turn.trim().is_empty() {
            let prompt = build_diversion_prompt(turn)?;
            let distractor = generator
                .complete(&prompt, &params)?
                .text
                .trim()
                .to_string();
            out.inserted_at.push(out.turns.len());
            out.turns.push(distractor);
        }
    }
    Ok(out)
}

/// Applies `spec` to one turn list using random stream `stream`.
pub fn perturb_turns(
    turns: &[String],
    spec: &PerturbSpec,
    generator: Option<&dyn CompletionBackend>,
    stream: u64,
) -> Result<Perturbation, PerturbError> {
    match spec.kind {
        PerturbKind::RepetitionInfusion => repetition_infusion_stream(turns, spec, stream),
        PerturbKind::FillerInjection => filler_injection_stream(turns, spec, stream),
        PerturbKind::ContextualDiversion => {
            let mock = MockDiversionBackend;
            let generator = generator.unwrap_or(&mock);
            contextual_diversion_stream(turns, spec, generator, stream)
        }
    }
}

/// Answers diversion prompts with `DISTRACTOR(<turn text>)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockDiversionBackend;

impl CompletionBackend for MockDiversionBackend {
    fn complete(
        &self,
        prompt: &str,
        _: &GenerationParams,
    ) -> Result<BackendCompletion, BackendError> {
        let input = prompt.strip_prefix(DIVERSION_PROMPT).unwrap_or(prompt);
        Ok(BackendCompletion::text(format!("DISTRACTOR({input})")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source_id: String,
    pub stream: u64,
    pub original_len: usize,
    pub output_len: usize,
    pub inserted_at: Vec<usize>,
}

/// Audit record written next to a perturbed transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbManifest {
    pub seed: u64,
    pub spec: PerturbSpec,
    pub entries: Vec<ManifestEntry>,
}

/// Perturbs every transcript; transcript `i` uses random stream `i`.
/// Transcripts too short for the chosen kind are passed through unchanged
/// and recorded with no insertions.
pub fn perturb_transcripts(
    transcripts: &[Transcript],
    spec: &PerturbSpec,
    generator: Option<&dyn CompletionBackend>,
) -> Result<(Vec<Transcript>, PerturbManifest), PerturbError> {
    let mut out = Vec::with_capacity(transcripts.len());
    let mut entries = Vec::with_capacity(transcripts.len());
    for (i, t) in transcripts.iter().enumerate() {
        let stream = i as u64;
        let p = match perturb_turns(&t.user_turns, spec, generator, stream) {
            Ok(p) => p,
            Err(PerturbError::TooShort { .. }) => {
                tracing::warn!(id = %t.id, len = t.user_turns.len(), "transcript too short, left unperturbed");
                Perturbation {
                    turns: t.user_turns.clone(),
                    inserted_at: Vec::new(),
                }
            }
            Err(e) => return Err(e),
        };
        let mut perturbed = t.clone();
        perturbed.id = format!("{}#{}", t.id, spec.kind.tag());
        perturbed.user_turns = p.turns;
        perturbed.tags.push(spec.kind.tag().to_string());
        entries.push(ManifestEntry {
            id: perturbed.id.clone(),
            source_id: t.id.clone(),
            stream,
            original_len: t.user_turns.len(),
            output_len: perturbed.user_turns.len(),
            inserted_at: p.inserted_at,
        });
        out.push(perturbed);
    }
    Ok((
        out,
        PerturbManifest {
            seed: spec.seed,
            spec: spec.clone(),
            entries,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FailingBackend, ScriptedBackend};

    fn turns(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn numbered(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("turn {i}")).collect()
    }

    #[test]
    fn repetition_only_middle_is_eligible() {
        let spec = PerturbSpec::new(PerturbKind::RepetitionInfusion, 7).with_n(1);
        let out = repetition_infusion(&turns(&["A", "B", "C"]), &spec).unwrap();
        assert_eq!(out.turns, turns(&["A", "B", "B", "C"]));
        assert_eq!(out.inserted_at, vec![2]);
    }

    #[test]
    fn repetition_ratio_count() {
        let spec = PerturbSpec::new(PerturbKind::RepetitionInfusion, 11);
        let input = numbered(8);
        let out = repetition_infusion(&input, &spec).unwrap();
        assert_eq!(out.turns.len(), 10);
        assert_eq!(out.turns.iter().filter(|t| *t == "turn 1").count(), 1);
        assert_eq!(out.turns.iter().filter(|t| *t == "turn 8").count(), 1);
        assert_eq!(out.turns.first().unwrap(), "turn 1");
        assert_eq!(out.turns.last().unwrap(), "turn 8");
    }

    #[test]
    fn repetition_is_deterministic_per_seed() {
        let input = numbered(12);
        let spec = PerturbSpec::new(PerturbKind::RepetitionInfusion, 99).with_n(3);
        assert_eq!(
            repetition_infusion(&input, &spec),
            repetition_infusion(&input, &spec)
        );
    }

    #[test]
    fn too_short_inputs() {
        let spec = PerturbSpec::new(PerturbKind::RepetitionInfusion, 1);
        assert!(matches!(
            repetition_infusion(&numbered(2), &spec),
            Err(PerturbError::TooShort { min: 3, len: 2, .. })
        ));
        let spec = PerturbSpec::new(PerturbKind::FillerInjection, 1);
        assert!(matches!(
            filler_injection(&numbered(1), &spec),
            Err(PerturbError::TooShort { min: 2, .. })
        ));
        let spec = PerturbSpec::new(PerturbKind::ContextualDiversion, 1);
        assert!(matches!(
            contextual_diversion(&numbered(2), &spec, &MockDiversionBackend),
            Err(PerturbError::TooShort { .. })
        ));
    }

    #[test]
    fn filler_before_second_turn() {
        let spec = PerturbSpec::new(PerturbKind::FillerInjection, 3).with_n(1);
        let out = filler_injection(&turns(&["A", "B"]), &spec).unwrap();
        assert_eq!(out.turns.len(), 3);
        assert_eq!(out.turns[0], "A");
        assert!(FILLER_WORDS.contains(&out.turns[1].as_str()));
        assert_eq!(out.turns[2], "B");
    }

    #[test]
    fn filler_zero_is_identity() {
        let spec = PerturbSpec::new(PerturbKind::FillerInjection, 3).with_n(0);
        let input = numbered(5);
        assert_eq!(filler_injection(&input, &spec).unwrap().turns, input);
    }

    #[test]
    fn diversion_prompt_text() {
        let p = build_diversion_prompt("Book a room.").unwrap();
        assert!(p.starts_with("Can you come up with related but distracting information"));
        assert!(p.contains(
            "Make sure the added information is not helping make the instructions more clear."
        ));
        assert!(p.ends_with("Here is the input to modify:\nBook a room."));
        let q = build_diversion_prompt("Other.").unwrap();
        assert_eq!(p.strip_suffix("Book a room."), q.strip_suffix("Other."));
        assert_eq!(build_diversion_prompt("  \n"), Err(PerturbError::BlankTurn));
    }

    #[test]
    fn diversion_with_mock() {
        let spec = PerturbSpec::new(PerturbKind::ContextualDiversion, 5).with_n(1);
        let out =
            contextual_diversion(&turns(&["A", "B", "C"]), &spec, &MockDiversionBackend).unwrap();
        assert_eq!(out.turns, turns(&["A", "B", "DISTRACTOR(B)", "C"]));
    }

    #[test]
    fn diversion_skips_blank_turns() {
        let spec = PerturbSpec::new(PerturbKind::ContextualDiversion, 5).with_n(1);
        let out =
            contextual_diversion(&turns(&["A", " ", "C"]), &spec, &MockDiversionBackend).unwrap();
        assert_eq!(out.turns, turns(&["A", " ", "C"]));
        assert!(out.inserted_at.is_empty());
    }

    #[test]
    fn diversion_sends_prompt_and_params() {
        let spec = PerturbSpec::new(PerturbKind::ContextualDiversion, 5).with_n(1);
        let backend = ScriptedBackend::from_texts(["  Rooms book up fast.  "]);
        let out =
            contextual_diversion(&turns(&["A", "Check rooms.", "C"]), &spec, &backend).unwrap();
        assert_eq!(out.turns[2], "Rooms book up fast.");
        assert_eq!(
            backend.prompts(),
            vec![build_diversion_prompt("Check rooms.").unwrap()]
        );
        let p = spec.diversion_params.unwrap();
        assert_eq!((p.temperature, p.top_p, p.max_tokens), (1.0, 0.75, 4096));
    }

    #[test]
    fn generator_failure_aborts() {
        let spec = PerturbSpec::new(PerturbKind::ContextualDiversion, 5).with_n(1);
        let err = contextual_diversion(&numbered(4), &spec, &FailingBackend).unwrap_err();
        assert!(matches!(err, PerturbError::Generator(_)));
    }

    #[test]
    fn insertion_count_rules() {
        let spec = PerturbSpec::new(PerturbKind::RepetitionInfusion, 0);
        assert_eq!(spec.insertion_count(8).unwrap(), 2);
        assert_eq!(spec.insertion_count(3).unwrap(), 1);
        assert_eq!(spec.insertion_count(9).unwrap(), 3);
        assert_eq!(spec.clone().with_n(5).insertion_count(3).unwrap(), 5);
        assert_eq!(
            spec.with_ratio(0.0).insertion_count(4),
            Err(PerturbError::InvalidRatio(0.0))
        );
    }

    #[test]
    fn over_large_n_is_clamped_to_eligible() {
        let spec = PerturbSpec::new(PerturbKind::RepetitionInfusion, 0).with_n(10);
        let out = repetition_infusion(&numbered(4), &spec).unwrap();
        assert_eq!(out.turns.len(), 6);
    }

    #[test]
    fn transcript_streams_differ_and_manifest_records() {
        let ts: Vec<Transcript> = (0..3)
            .map(|i| Transcript::new(format!("t{i}"), numbered(10)))
            .collect();
        let spec = PerturbSpec::new(PerturbKind::FillerInjection, 42).with_n(2);
        let (out, manifest) = perturb_transcripts(&ts, &spec, None).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(manifest.entries.len(), 3);
        assert_eq!(out[0].id, "t0#fi");
        assert!(out[0].tags.contains(&"fi".to_string()));
        for (t, e) in out.iter().zip(&manifest.entries) {
            assert_eq!(t.user_turns.len(), e.output_len);
            for &pos in &e.inserted_at {
                assert!(FILLER_WORDS.contains(&t.user_turns[pos].as_str()));
            }
        }
        let (again, _) = perturb_transcripts(&ts, &spec, None).unwrap();
        assert_eq!(out, again);
    }
}
