use serde::{Deserialize, Serialize};

/// Linear time-to-first-token model over prompt tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtftModel {
    pub intercept_seconds: f64,
    pub seconds_per_token: f64,
}

impl Default for TtftModel {
    fn default() -> Self {
        // 1.15 s for 1782 tokens, rounded
        Self {
            intercept_seconds: 0.0,
            seconds_per_token: 0.00065,
        }
    }
}

impl TtftModel {
    pub fn is_valid(&self) -> bool {
        self.seconds_per_token > 0.0 && self.intercept_seconds.is_finite()
    }

    pub fn estimate(&self, prompt_tokens: usize) -> f64 {
        self.intercept_seconds + self.seconds_per_token * prompt_tokens as f64
    }
}

pub fn estimate_ttft(prompt_tokens: usize, model: &TtftModel) -> f64 {
    model.estimate(prompt_tokens)
}
