//! Config file mirroring the command-line flags.
//!
//! Every field is optional; a flag given on the command line wins over the
//! file, and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chatcondense_core::client::ProviderProfile;
use chatcondense_core::decider::TauScope;
use chatcondense_core::harness::TtftModel;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub strategy: Option<String>,
    pub w: Option<usize>,
    pub gamma: Option<f64>,
    pub tau: Option<usize>,
    pub fifo_limit: Option<usize>,
    pub integration_delay_turns: Option<usize>,
    pub decider_enabled: Option<bool>,
    pub tau_scope: Option<TauScope>,
    pub live: Option<bool>,
    pub concurrency: Option<usize>,
    pub repeats: Option<usize>,
    pub lenient: Option<bool>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub condenser_model: Option<String>,
    pub diversion_model: Option<String>,
    pub profile: Option<ProviderProfile>,
    pub profile_file: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<usize>,
    pub mock_reply_tokens: Option<usize>,
    pub mock_vocab: Option<usize>,
    pub mock_vocab_spread: Option<usize>,
    pub mock_condensed_user_tokens: Option<usize>,
    pub mock_condensed_assistant_tokens: Option<usize>,
    pub ttft: Option<TtftModel>,
    pub exemplars: Option<PathBuf>,
    pub ratio: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub gammas: Option<Vec<f64>>,
    pub taus: Option<Vec<usize>>,
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl FileConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if is_json(path) {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        if cfg.profile.is_some() && cfg.profile_file.is_some() {
            bail!("config sets both profile and profile_file");
        }
        Ok(cfg)
    }

    pub fn provider_profile(&self, flag: Option<&Path>) -> Result<ProviderProfile> {
        if let Some(path) = flag.or(self.profile_file.as_deref()) {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading profile {}", path.display()))?;
            return if is_json(path) {
                serde_json::from_str(&text).context("parsing provider profile")
            } else {
                toml::from_str(&text).context("parsing provider profile")
            };
        }
        Ok(self.profile.clone().unwrap_or_default())
    }
}
