use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::stem::stem;

const BUNDLED_STOPWORDS: &str = include_str!("../../assets/stopwords.txt");

/// Lowercased, stopword-filtered, stemmed content words of a text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedWordSet(BTreeSet<String>);

impl NormalizedWordSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn as_set(&self) -> &BTreeSet<String> {
        &self.0
    }

    pub fn extend_from(&mut self, other: &NormalizedWordSet) {
        self.0.extend(other.0.iter().cloned());
    }

    /// Elements of `self` not present in `other`.
    pub fn difference(&self, other: &NormalizedWordSet) -> NormalizedWordSet {
        NormalizedWordSet(self.0.difference(&other.0).cloned().collect())
    }
}

impl<S: Into<String>> FromIterator<S> for NormalizedWordSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

/// Text normalization pipeline: lowercase, split on anything that is not a
/// letter or digit, drop stopwords, stem.
pub struct Normalizer {
    stopwords: HashSet<String>,
}

impl std::fmt::Debug for Normalizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Normalizer")
            .field("stopwords", &self.stopwords.len())
            .finish()
    }
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::with_stopwords(parse_stopwords(BUNDLED_STOPWORDS))
    }
}

impl Normalizer {
    pub fn with_stopwords(stopwords: impl IntoIterator<Item = String>) -> Self {
        Self {
            stopwords: stopwords.into_iter().collect(),
        }
    }

    /// Loads a stopword list with one word per line.
    pub fn from_stopword_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::with_stopwords(parse_stopwords(&text)))
    }

    /// Shared instance using the bundled stopword list.
    pub fn bundled() -> &'static Normalizer {
        static BUNDLED: OnceLock<Normalizer> = OnceLock::new();
        BUNDLED.get_or_init(Normalizer::default)
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    pub fn normalize(&self, text: &str) -> NormalizedWordSet {
        let lowered = text.to_lowercase();
        let mut out = BTreeSet::new();
        // letters without a lowercase mapping (e.g. fraktur capitals) split too
        for word in lowered.split(|c: char| !c.is_alphanumeric() || c.is_uppercase()) {
            if word.is_empty() || self.is_stopword(word) {
                continue;
            }
            let stem = stem(word);
            // stems such as "hers" -> "her" can land back on the list
            if stem.is_empty() || self.is_stopword(&stem) {
                continue;
            }
            out.insert(stem);
        }
        NormalizedWordSet(out)
    }
}

fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Normalizes `text` with the bundled stopword list.
pub fn normalize(text: &str) -> NormalizedWordSet {
    Normalizer::bundled().normalize(text)
}
