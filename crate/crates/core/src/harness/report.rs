use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::run::{SessionRun, TurnRecord};
use super::strategy::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub sessions: usize,
    pub turns: usize,
    /// Mean prompt history tokens per turn.
    pub avg_history_tokens: f64,
    pub total_history_tokens: usize,
    pub total_background_tokens: usize,
    pub total_tokens_with_background: usize,
    /// Set once a paired baseline run is attached.
    pub reduction_vs_baseline_percent: Option<f64>,
    pub exact_match_accuracy: Option<f64>,
    pub withheld_session_count: usize,
    pub aborted_session_count: usize,
    pub mean_ttft_seconds: f64,
}

impl Aggregates {
    fn from_sessions(sessions: &[SessionRun]) -> Self {
        let records = || sessions.iter().flat_map(|s| &s.records);
        let turns = records().count();
        let total_history_tokens: usize = sessions.iter().map(SessionRun::history_tokens).sum();
        let total_background_tokens: usize =
            sessions.iter().map(SessionRun::background_tokens).sum();
        let scored: Vec<bool> = sessions.iter().filter_map(|s| s.exact_match).collect();
        let mean = |sum: f64| if turns == 0 { 0.0 } else { sum / turns as f64 };
        Self {
            sessions: sessions.len(),
            turns,
            avg_history_tokens: mean(total_history_tokens as f64),
            total_history_tokens,
            total_background_tokens,
            total_tokens_with_background: total_history_tokens + total_background_tokens,
            reduction_vs_baseline_percent: None,
            exact_match_accuracy: (!scored.is_empty())
                .then(|| scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64),
            withheld_session_count: sessions.iter().filter(|s| s.was_withheld()).count(),
            aborted_session_count: sessions.iter().filter(|s| s.aborted.is_some()).count(),
            mean_ttft_seconds: mean(records().map(|r| r.estimated_ttft_seconds).sum()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub sessions: Vec<SessionRun>,
    pub aggregates: Aggregates,
}

impl RunReport {
    pub fn new(strategy: Strategy, sessions: Vec<SessionRun>) -> Self {
        let aggregates = Aggregates::from_sessions(&sessions);
        Self {
            strategy,
            sessions,
            aggregates,
        }
    }

    pub fn transcript_ids(&self) -> BTreeSet<&str> {
        self.sessions
            .iter()
            .map(|s| s.transcript_id.as_str())
            .collect()
    }

    /// Fills in the reduction against `baseline`, which must cover the same
    /// transcripts.
    pub fn attach_baseline(&mut self, baseline: &RunReport) -> Result<(), CompareError> {
        let c = compare_runs(baseline, self)?;
        self.aggregates.reduction_vs_baseline_percent = Some(c.reduction_percent);
        Ok(())
    }

    /// Mean per-turn curve over all sessions.
    pub fn curve(&self) -> Vec<RunCurvePoint> {
        let mut by_turn: BTreeMap<usize, Vec<&TurnRecord>> = BTreeMap::new();
        for r in self.sessions.iter().flat_map(|s| &s.records) {
            by_turn.entry(r.turn_index).or_default().push(r);
        }
        let mut cumulative = 0.0;
        by_turn
            .into_iter()
            .map(|(turn_index, rs)| {
                let n = rs.len() as f64;
                let history = rs
                    .iter()
                    .map(|r| r.prompt_history_tokens as f64)
                    .sum::<f64>()
                    / n;
                let background = rs.iter().map(|r| r.background_tokens() as f64).sum::<f64>() / n;
                cumulative += history + background;
                RunCurvePoint {
                    turn_index,
                    sessions: rs.len(),
                    mean_history_tokens: history,
                    mean_background_tokens: background,
                    cumulative_tokens_with_background: cumulative,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCurvePoint {
    pub turn_index: usize,
    pub sessions: usize,
    pub mean_history_tokens: f64,
    pub mean_background_tokens: f64,
    pub cumulative_tokens_with_background: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("runs cover different transcripts (only in baseline: {only_baseline:?}, only in candidate: {only_candidate:?})")]
    MismatchedTranscripts {
        only_baseline: Vec<String>,
        only_candidate: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptComparison {
    pub transcript_id: String,
    pub baseline_history_tokens: f64,
    pub candidate_history_tokens: f64,
    pub reduction_percent: f64,
    pub final_turn_reduction_percent: f64,
    pub baseline_accuracy: Option<f64>,
    pub candidate_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub turn_index: usize,
    pub baseline_history_tokens: f64,
    pub candidate_history_tokens: f64,
    pub baseline_cumulative_with_background: f64,
    pub candidate_cumulative_with_background: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_strategy: String,
    pub candidate_strategy: String,
    pub per_transcript: Vec<TranscriptComparison>,
    pub baseline_total_history_tokens: f64,
    pub candidate_total_history_tokens: f64,
    pub baseline_total_with_background: f64,
    pub candidate_total_with_background: f64,
    pub reduction_percent: f64,
    pub reduction_with_background_percent: f64,
    /// Reduction over the summed last-turn histories.
    pub final_turn_reduction_percent: f64,
    pub accuracy_delta: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

fn reduction(base: f64, candidate: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (base - candidate) / base
    }
}

/// Per-transcript means over repeats.
struct Summary {
    history: f64,
    with_background: f64,
    final_turn: f64,
    accuracy: Option<f64>,
    history_curve: Vec<f64>,
    total_curve: Vec<f64>,
}

fn summarize(report: &RunReport) -> BTreeMap<&str, Summary> {
    let mut groups: BTreeMap<&str, Vec<&SessionRun>> = BTreeMap::new();
    for s in &report.sessions {
        groups.entry(&s.transcript_id).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(id, runs)| {
            let n = runs.len() as f64;
            let mean = |f: &dyn Fn(&SessionRun) -> f64| runs.iter().map(|s| f(s)).sum::<f64>() / n;
            let turns = runs.iter().map(|s| s.records.len()).max().unwrap_or(0);
            let per_turn = |f: &dyn Fn(&TurnRecord) -> f64| -> Vec<f64> {
                (0..turns)
                    .map(|t| {
                        let vals: Vec<f64> = runs
                            .iter()
                            .filter_map(|s| s.records.get(t))
                            .map(f)
                            .collect();
                        vals.iter().sum::<f64>() / vals.len() as f64
                    })
                    .collect()
            };
            let scored: Vec<bool> = runs.iter().filter_map(|s| s.exact_match).collect();
            let summary = Summary {
                history: mean(&|s| s.history_tokens() as f64),
                with_background: mean(&|s| s.total_tokens_with_background() as f64),
                final_turn: mean(&|s| {
                    s.records
                        .last()
                        .map_or(0.0, |r| r.prompt_history_tokens as f64)
                }),
                accuracy: (!scored.is_empty())
                    .then(|| scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64),
                history_curve: per_turn(&|r| r.prompt_history_tokens as f64),
                total_curve: per_turn(&|r| {
                    (r.prompt_history_tokens + r.background_tokens()) as f64
                }),
            };
            (id, summary)
        })
        .collect()
}

fn mean_curve(summaries: &BTreeMap<&str, Summary>, pick: fn(&Summary) -> &Vec<f64>) -> Vec<f64> {
    let len = summaries.values().map(|s| pick(s).len()).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = summaries
                .values()
                .filter_map(|s| pick(s).get(t).copied())
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

fn cumulative(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

pub fn compare_runs(
    baseline: &RunReport,
    candidate: &RunReport,
) -> Result<ComparisonReport, CompareError> {
    let (b_ids, c_ids) = (baseline.transcript_ids(), candidate.transcript_ids());
    if b_ids != c_ids {
        return Err(CompareError::MismatchedTranscripts {
            only_baseline: b_ids.difference(&c_ids).map(|s| s.to_string()).collect(),
            only_candidate: c_ids.difference(&b_ids).map(|s| s.to_string()).collect(),
        });
    }
    let (b, c) = (summarize(baseline), summarize(candidate));
    let per_transcript: Vec<TranscriptComparison> = b
        .iter()
        .map(|(id, bs)| {
            let cs = &c[id];
            TranscriptComparison {
                transcript_id: id.to_string(),
                baseline_history_tokens: bs.history,
                candidate_history_tokens: cs.history,
                reduction_percent: reduction(bs.history, cs.history),
                final_turn_reduction_percent: reduction(bs.final_turn, cs.final_turn),
                baseline_accuracy: bs.accuracy,
                candidate_accuracy: cs.accuracy,
            }
        })
        .collect();
    let sum = |m: &BTreeMap<&str, Summary>, f: fn(&Summary) -> f64| m.values().map(f).sum::<f64>();
    let (bh, ch) = (sum(&b, |s| s.history), sum(&c, |s| s.history));
    let (bt, ct) = (
        sum(&b, |s| s.with_background),
        sum(&c, |s| s.with_background),
    );
    let (bf, cf) = (sum(&b, |s| s.final_turn), sum(&c, |s| s.final_turn));

    let (b_hist, c_hist) = (
        mean_curve(&b, |s| &s.history_curve),
        mean_curve(&c, |s| &s.history_curve),
    );
    let (b_cum, c_cum) = (
        cumulative(&mean_curve(&b, |s| &s.total_curve)),
        cumulative(&mean_curve(&c, |s| &s.total_curve)),
    );
    let len = b_hist.len().max(c_hist.len());
    let at = |v: &[f64], t: usize| v.get(t).copied().unwrap_or(f64::NAN);
    let curve = (0..len)
        .map(|t| CurvePoint {
            turn_index: t + 1,
            baseline_history_tokens: at(&b_hist, t),
            candidate_history_tokens: at(&c_hist, t),
            baseline_cumulative_with_background: at(&b_cum, t),
            candidate_cumulative_with_background: at(&c_cum, t),
        })
        .collect();

    Ok(ComparisonReport {
        baseline_strategy: baseline.strategy.kind.label().into(),
        candidate_strategy: candidate.strategy.kind.label().into(),
        per_transcript,
        baseline_total_history_tokens: bh,
        candidate_total_history_tokens: ch,
        baseline_total_with_background: bt,
        candidate_total_with_background: ct,
        reduction_percent: reduction(bh, ch),
        reduction_with_background_percent: reduction(bt, ct),
        final_turn_reduction_percent: reduction(bf, cf),
        accuracy_delta: match (
            baseline.aggregates.exact_match_accuracy,
            candidate.aggregates.exact_match_accuracy,
        ) {
            (Some(b), Some(c)) => Some(c - b),
            _ => None,
        },
        curve,
    })
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    transcript_id: &'a str,
    repeat: usize,
    turn_index: usize,
    prompt_history_tokens: usize,
    prompt_tokens: usize,
    history_entries: usize,
    background_tokens_in: usize,
    background_tokens_out: usize,
    decision: &'a str,
    overlap: Option<f64>,
    decider_user_tokens: Option<usize>,
    events: String,
    estimated_ttft_seconds: f64,
}

/// Writes the full report as JSON, or one CSV row per turn.
pub fn emit_report(
    report: &RunReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    match format {
        ReportFormat::Json => write_json(report, path),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for s in &report.sessions {
                for r in &s.records {
                    let v = r.decider_verdict.as_ref();
                    w.serialize(CsvRow {
                        transcript_id: &s.transcript_id,
                        repeat: s.repeat,
                        turn_index: r.turn_index,
                        prompt_history_tokens: r.prompt_history_tokens,
                        prompt_tokens: r.prompt_tokens,
                        history_entries: r.history_entries,
                        background_tokens_in: r.background_tokens_in,
                        background_tokens_out: r.background_tokens_out,
                        decision: v.map_or("", |v| match v.decision {
                            crate::decider::Decision::Condense => "condense",
                            crate::decider::Decision::Withhold => "withhold",
                        }),
                        overlap: v.map(|v| v.overlap),
                        decider_user_tokens: v.map(|v| v.user_tokens),
                        events: r
                            .condensation_events
                            .iter()
                            .map(|e| e.as_str())
                            .collect::<Vec<_>>()
                            .join("|"),
                        estimated_ttft_seconds: r.estimated_ttft_seconds,
                    })?;
                }
            }
            w.flush()?;
            Ok(())
        }
    }
}

/// Writes the run's mean per-turn token curve as CSV.
pub fn emit_curve(report: &RunReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in report.curve() {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

impl ComparisonReport {
    pub fn emit(&self, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), ReportError> {
        match format {
            ReportFormat::Json => write_json(self, path),
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_path(path)?;
                for p in &self.curve {
                    w.serialize(p)?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }
}

pub(crate) fn write_json(
    value: &impl Serialize,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport, ReportError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
