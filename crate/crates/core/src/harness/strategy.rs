use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condenser::PromptStyle;
use crate::session::{ConfigError, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Full raw history every turn.
    MtBaseline,
    /// Windowed background condensation with the few-shot condenser.
    MtOsc,
    /// Keep only the most recent `fifo_limit` pairs.
    Fifo,
    /// MtOsc with a plain summarization prompt.
    MtOscSummarizer,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::MtBaseline => "baseline",
            StrategyKind::MtOsc => "mtosc",
            StrategyKind::Fifo => "fifo",
            StrategyKind::MtOscSummarizer => "summ",
        }
    }

    pub fn condenses(self) -> bool {
        matches!(self, StrategyKind::MtOsc | StrategyKind::MtOscSummarizer)
    }

    pub fn prompt_style(self) -> PromptStyle {
        match self {
            StrategyKind::MtOscSummarizer => PromptStyle::Summarizer,
            _ => PromptStyle::FewShot,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error(transparent)]
    Window(#[from] ConfigError),
    #[error("fifo limit must be at least 1")]
    FifoLimitZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    #[serde(default)]
    pub window_config: WindowConfig,
    #[serde(default = "default_fifo_limit")]
    pub fifo_limit: usize,
}

fn default_fifo_limit() -> usize {
    4
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            window_config: WindowConfig::default(),
            fifo_limit: default_fifo_limit(),
        }
    }

    pub fn baseline() -> Self {
        Self::new(StrategyKind::MtBaseline)
    }

    pub fn mt_osc(window_config: WindowConfig) -> Self {
        Self {
            window_config,
            ..Self::new(StrategyKind::MtOsc)
        }
    }

    pub fn fifo(limit: usize) -> Self {
        Self {
            fifo_limit: limit,
            ..Self::new(StrategyKind::Fifo)
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        match self.kind {
            StrategyKind::Fifo if self.fifo_limit == 0 => Err(StrategyError::FifoLimitZero),
            k if k.condenses() => Ok(self.window_config.validate()?),
            _ => Ok(()),
        }
    }
}
