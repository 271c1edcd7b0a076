//! Domain vocabulary: argument tuples, target groups, loci, tiers and the
//! per-edge score records every other module exchanges.
//!
//! All records are plain immutable values. They serialize one object per
//! JSONL line with the field names used below.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::content_hash;
use crate::scoring;

/// Literal token standing for the target group inside templates.
pub const DEFAULT_PLACEHOLDER: &str = "[TG]";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("template does not contain the placeholder {token:?}")]
    MissingPlaceholder { token: String },
    #[error("instance slot `{0}` is empty")]
    EmptySlot(&'static str),
    #[error("locus `{0}` is not in the configured pool")]
    UnknownLocus(String),
    #[error("stored chain score {stored} differs from recomputed {recomputed}")]
    ChainScoreMismatch { stored: f64, recomputed: f64 },
    #[error("locus pool is invalid: {0}")]
    InvalidPool(String),
    #[error("taxonomy is invalid: {0}")]
    InvalidTaxonomy(String),
    #[error("unknown tier `{0}`")]
    UnknownTier(String),
    #[error(transparent)]
    Scoring(#[from] scoring::ScoringError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetGroupRef {
    pub level1: String,
    pub level2: String,
    pub placeholder_token: String,
}

impl TargetGroupRef {
    pub fn new(level1: impl Into<String>, level2: impl Into<String>) -> Self {
        Self {
            level1: level1.into(),
            level2: level2.into(),
            placeholder_token: DEFAULT_PLACEHOLDER.to_string(),
        }
    }
}

/// Replaces every occurrence of the group's placeholder token with its
/// subgroup label.
pub fn substitute_target(template: &str, tg: &TargetGroupRef) -> Result<String, DomainError> {
    if tg.placeholder_token.is_empty() || !template.contains(&tg.placeholder_token) {
        return Err(DomainError::MissingPlaceholder {
            token: tg.placeholder_token.clone(),
        });
    }
    Ok(template.replace(&tg.placeholder_token, &tg.level2))
}

/// Substitutes the placeholder when present and passes already-resolved
/// text through unchanged.
pub fn resolve_target(text: &str, tg: &TargetGroupRef) -> String {
    substitute_target(text, tg).unwrap_or_else(|_| text.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocusId {
    pub name: String,
    pub scheme_description: String,
}

#[derive(Debug, Deserialize)]
struct LocusFile {
    locus: Vec<LocusId>,
}

/// Ordered pool of loci with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LocusId>", into = "Vec<LocusId>")]
pub struct LocusPool(Vec<LocusId>);

impl LocusPool {
    pub fn new(loci: Vec<LocusId>) -> Result<Self, DomainError> {
        if loci.is_empty() {
            return Err(DomainError::InvalidPool("pool is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &loci {
            if l.name.trim().is_empty() {
                return Err(DomainError::InvalidPool("locus with empty name".into()));
            }
            if !seen.insert(l.name.as_str()) {
                return Err(DomainError::InvalidPool(format!("duplicate locus `{}`", l.name)));
            }
        }
        Ok(Self(loci))
    }

    /// Parses the `[[locus]]` TOML layout used by `assets/loci.toml`.
    pub fn from_toml(src: &str) -> Result<Self, DomainError> {
        let file: LocusFile =
            toml::from_str(src).map_err(|e| DomainError::InvalidPool(e.to_string()))?;
        Self::new(file.locus)
    }

    pub fn as_slice(&self) -> &[LocusId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, locus: &LocusId) -> bool {
        self.0.iter().any(|l| l.name == locus.name)
    }
}

impl Default for LocusPool {
    fn default() -> Self {
        Self::from_toml(include_str!("../assets/loci.toml")).expect("shipped locus pool parses")
    }
}

impl TryFrom<Vec<LocusId>> for LocusPool {
    type Error = DomainError;
    fn try_from(v: Vec<LocusId>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LocusPool> for Vec<LocusId> {
    fn from(p: LocusPool) -> Self {
        p.0
    }
}

/// Evaluation tier, ordered from explicit to most obfuscated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Hard,
    SoftBase,
    #[serde(rename = "soft_gv")]
    SoftGV,
    #[serde(rename = "soft_hv")]
    SoftHV,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Hard, Tier::SoftBase, Tier::SoftGV, Tier::SoftHV];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Hard => "hard",
            Tier::SoftBase => "soft_base",
            Tier::SoftGV => "soft_gv",
            Tier::SoftHV => "soft_hv",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DomainError::UnknownTier(s.to_string()))
    }
}

/// Raw measurements and derived reward terms for one inferential edge.
///
/// `p_ent`, `p_contr`, `nll`, `entropy` and `redundancy` are the raw
/// (pre-normalization) values; `nll` and `entropy` are the means over the
/// cost models, with the per-model raw values kept alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub p_ent: f64,
    pub p_contr: f64,
    pub nll: f64,
    pub entropy: f64,
    pub redundancy: f64,
    pub effect: f64,
    pub nll_per_model: Vec<f64>,
    pub entropy_per_model: Vec<f64>,
    pub cost_per_model: Vec<f64>,
    pub relevance_per_model: Vec<f64>,
    pub relevance: f64,
}

/// Antecedent side of an edge. The procedural step joins premise and maxim
/// toward the standpoint; the material step joins endoxon and datum toward
/// the premise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainLink {
    Procedural { premise: String, maxim: String },
    Material { endoxon: String, datum: String },
}

impl ChainLink {
    /// Text fed to scorers as the edge antecedent X.
    pub fn antecedent_text(&self) -> String {
        match self {
            ChainLink::Procedural { premise, maxim } => join_sentences(premise, maxim),
            ChainLink::Material { endoxon, datum } => join_sentences(endoxon, datum),
        }
    }
}

/// Joins two sentences with a single space.
pub fn join_sentences(a: &str, b: &str) -> String {
    format!("{} {}", a.trim(), b.trim())
}

/// One scored inferential step X -> Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgEdge {
    pub link: ChainLink,
    pub conclusion: String,
    pub score: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRef {
    pub source_id: String,
    pub seed_hash: String,
}

impl SeedRef {
    pub fn new(source_id: impl Into<String>, seed_text: &str) -> Self {
        Self {
            source_id: source_id.into(),
            seed_hash: content_hash(&[seed_text]),
        }
    }
}

/// A completed six-slot argument chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmtInstance {
    pub endoxon: String,
    pub datum: String,
    pub premise: String,
    pub locus: LocusId,
    pub maxim: String,
    pub standpoint: String,
    pub target_group: TargetGroupRef,
    pub chain_score: f64,
    pub provenance: SeedRef,
    /// Edges in derivation order: procedural step first, material step second.
    pub edges: Vec<ArgEdge>,
}

impl AmtInstance {
    /// Surface text shown to readers: endoxon followed by datum.
    pub fn surface_text(&self) -> String {
        join_sentences(&self.endoxon, &self.datum)
    }

    pub fn edge_relevances(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.score.relevance).collect()
    }

    /// Recomputes the chain score from stored edge relevances.
    pub fn recompute_chain_score(&self, weights: Option<&[f64]>) -> Result<f64, DomainError> {
        Ok(scoring::chain_score(&self.edge_relevances(), weights)?)
    }

    /// Stable content hash over the six slots, used for tie-breaks.
    pub fn content_hash(&self) -> String {
        content_hash(&[
            self.endoxon.as_str(),
            self.datum.as_str(),
            self.premise.as_str(),
            self.locus.name.as_str(),
            self.maxim.as_str(),
            self.standpoint.as_str(),
        ])
    }

    pub fn validate(&self, pool: &LocusPool, weights: Option<&[f64]>) -> Result<(), DomainError> {
        for (name, value) in [
            ("endoxon", &self.endoxon),
            ("datum", &self.datum),
            ("premise", &self.premise),
            ("maxim", &self.maxim),
            ("standpoint", &self.standpoint),
            ("locus", &self.locus.name),
        ] {
            if value.trim().is_empty() {
                return Err(DomainError::EmptySlot(name));
            }
        }
        if !pool.contains(&self.locus) {
            return Err(DomainError::UnknownLocus(self.locus.name.clone()));
        }
        let recomputed = self.recompute_chain_score(weights)?;
        if recomputed.to_bits() != self.chain_score.to_bits() {
            return Err(DomainError::ChainScoreMismatch {
                stored: self.chain_score,
                recomputed,
            });
        }
        Ok(())
    }
}

/// A free-form post produced by the hostility-vague rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaturalPost {
    pub text: String,
}

/// A base instance with its two obfuscated variants and the originating
/// hard seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierFamily {
    pub family_id: String,
    pub hard_seed: String,
    pub base: AmtInstance,
    pub group_vague: AmtInstance,
    pub coded_reference: String,
    pub hostility_vague: NaturalPost,
}

impl TierFamily {
    /// Text presented to a detector for the given tier.
    pub fn tier_text(&self, tier: Tier) -> String {
        match tier {
            Tier::Hard => self.hard_seed.clone(),
            Tier::SoftBase => self.base.surface_text(),
            Tier::SoftGV => self.group_vague.surface_text(),
            Tier::SoftHV => self.hostility_vague.text.clone(),
        }
    }

    /// Instance carrying the latent chain for the tier, when there is one.
    pub fn tier_instance(&self, tier: Tier) -> Option<&AmtInstance> {
        match tier {
            Tier::Hard => None,
            Tier::SoftBase | Tier::SoftHV => Some(&self.base),
            Tier::SoftGV => Some(&self.group_vague),
        }
    }
}

/// Identifier of a family: content hash of standpoint and subgroup label,
/// so re-runs produce the same id.
pub fn family_id(standpoint: &str, level2: &str) -> String {
    content_hash(&[standpoint, level2])[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn women() -> TargetGroupRef {
        TargetGroupRef::new("Gender", "Women")
    }

    #[test]
    fn substitute_single() {
        assert_eq!(
            substitute_target("[TG] should be restricted", &women()).unwrap(),
            "Women should be restricted"
        );
    }

    #[test]
    fn substitute_missing_placeholder() {
        assert_eq!(
            substitute_target("no token here", &women()),
            Err(DomainError::MissingPlaceholder { token: "[TG]".into() })
        );
    }

    #[test]
    fn substitute_multiple() {
        let muslim = TargetGroupRef::new("Religion/Belief", "Muslim");
        assert_eq!(substitute_target("[TG] and [TG]", &muslim).unwrap(), "Muslim and Muslim");
    }

    #[test]
    fn substitute_custom_token() {
        let mut tg = women();
        tg.placeholder_token = "<GRUPPE>".into();
        assert_eq!(substitute_target("<GRUPPE> x", &tg).unwrap(), "Women x");
        assert!(substitute_target("[TG] x", &tg).is_err());
    }

    #[test]
    fn tier_order_and_names() {
        assert!(Tier::Hard < Tier::SoftBase);
        assert!(Tier::SoftBase < Tier::SoftGV);
        assert!(Tier::SoftGV < Tier::SoftHV);
        for t in Tier::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
            assert_eq!(serde_json::from_str::<Tier>(&json).unwrap(), t);
            assert_eq!(t.as_str().parse::<Tier>().unwrap(), t);
        }
        assert!("soft".parse::<Tier>().is_err());
    }

    #[test]
    fn default_pool_has_eight_unique_schemes() {
        let pool = LocusPool::default();
        assert_eq!(pool.len(), 8);
        assert!(LocusPool::new(vec![]).is_err());
        let dup = LocusId { name: "a".into(), scheme_description: String::new() };
        assert!(LocusPool::new(vec![dup.clone(), dup]).is_err());
    }

    #[test]
    fn family_id_is_stable() {
        assert_eq!(family_id("S", "Women"), family_id("S", "Women"));
        assert_ne!(family_id("S", "Women"), family_id("S", "Men"));
        assert_eq!(family_id("S", "Women").len(), 16);
    }
}
