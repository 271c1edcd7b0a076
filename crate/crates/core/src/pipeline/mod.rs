//! Dataset pipeline: seed curation, per-class selection, tier augmentation
//! and non-hate counterparts. Stage drivers with file I/O live in
//! [`crate::runner`].

pub mod adapters;
pub mod augment;
pub mod curate;
pub mod select;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::domain::DomainError;
use crate::prompts::PromptError;
use crate::search::SearchError;

pub use augment::{counter_standpoint, group_vague, hostility_vague, AugmentConfig, Augmenter};
pub use curate::{clean_and_filter, clean_text, dedup, majority_vote, CurationConfig, Curator};
pub use select::select_benchmark;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("record `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("{flags} flags for a {denominator}-way vote")]
    LengthMismatch { flags: usize, denominator: usize },
    #[error("taxonomy label unresolved for `{0}`")]
    TaxonomyUnresolved(String),
    #[error("empty standpoint group")]
    EmptyGroup,
    #[error("no valid candidate: {0}")]
    NoValidCandidate(String),
    #[error("adapter `{source_name}`: {msg}")]
    Adapter { source_name: String, msg: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Hate,
    NonHate,
}

/// Per-item curation state. Optional fields fill in as stages run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub raw_text: String,
    pub source_id: String,
    pub binary_label: BinaryLabel,
    #[serde(default)]
    pub clean_text: Option<String>,
    #[serde(default)]
    pub standpoint: Option<String>,
    #[serde(default)]
    pub target_phrase: Option<String>,
    #[serde(default)]
    pub level1: Option<String>,
    #[serde(default)]
    pub level2: Option<String>,
    #[serde(default)]
    pub canonical_standpoint: Option<String>,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
}

impl SeedRecord {
    pub fn new(source_id: impl Into<String>, raw_text: impl Into<String>, binary_label: BinaryLabel) -> Self {
        Self {
            raw_text: raw_text.into(),
            source_id: source_id.into(),
            binary_label,
            clean_text: None,
            standpoint: None,
            target_phrase: None,
            level1: None,
            level2: None,
            canonical_standpoint: None,
            embedding: None,
        }
    }

    /// Cleaned text when available, raw text otherwise.
    pub fn text(&self) -> &str {
        self.clean_text.as_deref().unwrap_or(&self.raw_text)
    }

    /// Key under which near-duplicates may merge: the subgroup when known,
    /// else the lowercased target phrase.
    pub fn target_key(&self) -> Option<String> {
        self.level2
            .clone()
            .or_else(|| self.target_phrase.as_ref().map(|t| t.trim().to_lowercase()))
    }
}

/// Index of the first maximum, ignoring NaN.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax_first(&[1.7, 1.55, 1.6]), Some(0));
        assert_eq!(argmax_first(&[1.2, 1.5, 1.5]), Some(1));
        assert_eq!(argmax_first(&[]), None);
        assert_eq!(argmax_first(&[f64::NAN, 0.1]), Some(1));
    }

    #[test]
    fn target_key_prefers_level2() {
        let mut r = SeedRecord::new("a", "t", BinaryLabel::Hate);
        assert_eq!(r.target_key(), None);
        r.target_phrase = Some(" Women ".into());
        assert_eq!(r.target_key().as_deref(), Some("women"));
        r.level2 = Some("Women".into());
        assert_eq!(r.target_key().as_deref(), Some("Women"));
    }
}
