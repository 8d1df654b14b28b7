use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::report::{write_json, Aggregates, ReportError, ReportFormat, RunReport};
use super::run::{run_session, RunContext, RunError};
use super::strategy::Strategy;
use super::transcript::Transcript;

pub const DEFAULT_GAMMAS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
pub const DEFAULT_TAUS: [usize; 5] = [500, 1000, 2000, 3000, 4000];

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("sweeps need a condensing strategy, got {0}")]
    NotCondensing(&'static str),
    #[error("cell gamma={gamma} tau={tau}: {source}")]
    Cell {
        gamma: f64,
        tau: usize,
        source: RunError,
    },
}

/// Outcome of one (gamma, tau) setting. Every session lands in exactly one
/// of the three counts: withheld if the decider ever withheld, condensed if
/// a job was admitted and nothing was withheld, untriggered otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub tau: usize,
    pub condensed_sessions: usize,
    pub withheld_sessions: usize,
    pub untriggered_sessions: usize,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub gammas: Vec<f64>,
    pub taus: Vec<usize>,
    /// Gamma-major order.
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, gamma: f64, tau: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.gamma == gamma && c.tau == tau)
    }

    pub fn emit(&self, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), ReportError> {
        match format {
            ReportFormat::Json => write_json(self, path),
            ReportFormat::Csv => {
                #[derive(Serialize)]
                struct Row {
                    gamma: f64,
                    tau: usize,
                    condensed_sessions: usize,
                    withheld_sessions: usize,
                    untriggered_sessions: usize,
                    avg_history_tokens: f64,
                    total_tokens_with_background: usize,
                    exact_match_accuracy: Option<f64>,
                }
                let mut w = csv::Writer::from_path(path)?;
                for c in &self.cells {
                    w.serialize(Row {
                        gamma: c.gamma,
                        tau: c.tau,
                        condensed_sessions: c.condensed_sessions,
                        withheld_sessions: c.withheld_sessions,
                        untriggered_sessions: c.untriggered_sessions,
                        avg_history_tokens: c.aggregates.avg_history_tokens,
                        total_tokens_with_background: c.aggregates.total_tokens_with_background,
                        exact_match_accuracy: c.aggregates.exact_match_accuracy,
                    })?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }
}

/// Replays `transcripts` under `base` once per (gamma, tau) pair.
pub fn decider_sweep(
    transcripts: &[Transcript],
    gammas: &[f64],
    taus: &[usize],
    base: &Strategy,
    ctx: &RunContext<'_>,
) -> Result<SweepReport, SweepError> {
    if gammas.is_empty() || taus.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    if !base.kind.condenses() {
        return Err(SweepError::NotCondensing(base.kind.label()));
    }
    let grid: Vec<(f64, usize)> = gammas
        .iter()
        .flat_map(|&g| taus.iter().map(move |&t| (g, t)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(gamma, tau)| {
            let mut strategy = base.clone();
            strategy.window_config.gamma = gamma;
            strategy.window_config.tau = tau;
            let sessions = transcripts
                .iter()
                .map(|t| run_session(t, &strategy, ctx))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| SweepError::Cell { gamma, tau, source })?;
            let withheld = sessions.iter().filter(|s| s.was_withheld()).count();
            let condensed = sessions
                .iter()
                .filter(|s| !s.was_withheld() && s.was_condensed())
                .count();
            let report = RunReport::new(strategy, sessions);
            Ok(SweepCell {
                gamma,
                tau,
                condensed_sessions: condensed,
                withheld_sessions: withheld,
                untriggered_sessions: report.sessions.len() - condensed - withheld,
                aggregates: report.aggregates,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport {
        gammas: gammas.to_vec(),
        taus: taus.to_vec(),
        cells,
    })
}
