//! Safety-filter ensemble used by admissibility checks.
//!
//! Hard rules are checked first and fail a text outright. Otherwise each
//! classifier contributes an indicator `score >= per_model_threshold` and
//! the configured strategy aggregates them:
//!
//! * `weighted_bagging`: weighted mean of indicators `>= 0.5` fails;
//! * `majority`: more than half of the indicators set fails;
//! * `quantile`: nearest-rank `q`-quantile of raw scores `>= threshold` fails.

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("invalid safety configuration: {0}")]
    InvalidConfig(String),
    #[error("{weights} ensemble weights for {classifiers} classifiers")]
    WeightMismatch { weights: usize, classifiers: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    WeightedBagging,
    Majority,
    Quantile,
}

/// A rule that fails a text regardless of the ensemble. It fires when the
/// pattern (if any) matches and the named classifier (if any) scores at or
/// above `confidence`. At least one of the two must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardRule {
    pub name: String,
    #[serde(default)]
    pub pattern: Option<String>,
    #[serde(default)]
    pub classifier: Option<usize>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyEnsembleConfig {
    pub per_model_threshold: f64,
    pub aggregation: Aggregation,
    pub quantile_q: f64,
    /// Empty means equal weights.
    pub weights: Vec<f64>,
    pub batch_size: usize,
    pub hard_rules: Vec<HardRule>,
}

impl Default for SafetyEnsembleConfig {
    fn default() -> Self {
        Self {
            per_model_threshold: 0.5,
            aggregation: Aggregation::WeightedBagging,
            quantile_q: 0.75,
            weights: Vec::new(),
            batch_size: 64,
            hard_rules: vec![HardRule {
                name: "rule_classifier".into(),
                pattern: None,
                classifier: Some(0),
                confidence: 0.99,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "detail", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    HardRule(String),
    Ensemble,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Compiled form of a [`SafetyEnsembleConfig`].
#[derive(Debug, Clone)]
pub struct SafetyEnsemble {
    cfg: SafetyEnsembleConfig,
    patterns: Vec<Option<Regex>>,
}

/// Nearest-rank quantile: the smallest value with at least `q * n` values
/// at or below it.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

impl SafetyEnsemble {
    pub fn new(cfg: SafetyEnsembleConfig) -> Result<Self, SafetyError> {
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !unit(cfg.per_model_threshold) || !unit(cfg.quantile_q) {
            return Err(SafetyError::InvalidConfig("threshold and quantile must lie in [0,1]".into()));
        }
        if cfg.batch_size == 0 {
            return Err(SafetyError::InvalidConfig("batch_size must be positive".into()));
        }
        if cfg.weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || (!cfg.weights.is_empty() && cfg.weights.iter().sum::<f64>() <= 0.0)
        {
            return Err(SafetyError::InvalidConfig("weights must be non-negative with a positive sum".into()));
        }
        let mut patterns = Vec::with_capacity(cfg.hard_rules.len());
        for r in &cfg.hard_rules {
            if r.pattern.is_none() && r.classifier.is_none() {
                return Err(SafetyError::InvalidConfig(format!("hard rule `{}` has neither pattern nor classifier", r.name)));
            }
            if !unit(r.confidence) {
                return Err(SafetyError::InvalidConfig(format!("hard rule `{}` confidence outside [0,1]", r.name)));
            }
            patterns.push(
                r.pattern
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| SafetyError::InvalidConfig(format!("hard rule `{}`: {e}", r.name)))?,
            );
        }
        Ok(Self { cfg, patterns })
    }

    pub fn config(&self) -> &SafetyEnsembleConfig {
        &self.cfg
    }

    /// Verdict from already-computed classifier scores.
    pub fn verdict_from_scores(&self, text: &str, scores: &[f64]) -> Result<Verdict, SafetyError> {
        let n = scores.len();
        if !self.cfg.weights.is_empty() && self.cfg.weights.len() != n {
            return Err(SafetyError::WeightMismatch { weights: self.cfg.weights.len(), classifiers: n });
        }
        for (rule, pat) in self.cfg.hard_rules.iter().zip(&self.patterns) {
            let pattern_hit = pat.as_ref().is_none_or(|p| p.is_match(text));
            let score_hit = match rule.classifier {
                None => true,
                Some(k) => scores.get(k).is_some_and(|s| *s >= rule.confidence),
            };
            if pattern_hit && score_hit {
                return Ok(Verdict::HardRule(rule.name.clone()));
            }
        }
        if n == 0 {
            return Ok(Verdict::Pass);
        }
        let theta = self.cfg.per_model_threshold;
        let flagged: Vec<bool> = scores.iter().map(|s| *s >= theta).collect();
        let fail = match self.cfg.aggregation {
            Aggregation::WeightedBagging => {
                let w: Vec<f64> = if self.cfg.weights.is_empty() { vec![1.0; n] } else { self.cfg.weights.clone() };
                let total: f64 = w.iter().sum();
                let hit: f64 = w.iter().zip(&flagged).filter(|(_, f)| **f).map(|(w, _)| w).sum();
                hit / total >= 0.5
            }
            Aggregation::Majority => 2 * flagged.iter().filter(|f| **f).count() > n,
            Aggregation::Quantile => nearest_rank_quantile(scores, self.cfg.quantile_q).is_some_and(|q| q >= theta),
        };
        Ok(if fail { Verdict::Ensemble } else { Verdict::Pass })
    }

    pub fn verdict(&self, text: &str, backends: &BackendSet) -> Result<Verdict, SafetyError> {
        let scores = backends.safety_score(text)?;
        self.verdict_from_scores(text, &scores)
    }

    /// Verdicts for many texts, scored in batches of `batch_size`.
    pub fn verdicts(&self, texts: &[String], backends: &BackendSet) -> Result<Vec<Verdict>, SafetyError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.batch_size) {
            let part = chunk.par_iter().map(|t| self.verdict(t, backends)).collect::<Result<Vec<_>, _>>()?;
            out.extend(part);
        }
        Ok(out)
    }
}

/// One-shot convenience wrapper.
pub fn safety_verdict(text: &str, cfg: &SafetyEnsembleConfig, backends: &BackendSet) -> Result<Verdict, SafetyError> {
    SafetyEnsemble::new(cfg.clone())?.verdict(text, backends)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(aggregation: Aggregation, hard_rules: Vec<HardRule>) -> SafetyEnsemble {
        SafetyEnsemble::new(SafetyEnsembleConfig { aggregation, hard_rules, ..Default::default() }).unwrap()
    }

    #[test]
    fn bagging_boundary_is_inclusive() {
        let e = ens(Aggregation::WeightedBagging, vec![]);
        assert_eq!(e.verdict_from_scores("t", &[0.6, 0.3]).unwrap(), Verdict::Ensemble);
        assert_eq!(e.verdict_from_scores("t", &[0.4, 0.3]).unwrap(), Verdict::Pass);
    }

    #[test]
    fn quantile_nearest_rank() {
        assert_eq!(nearest_rank_quantile(&[0.9, 0.1, 0.3, 0.2], 0.75), Some(0.3));
        let e = ens(Aggregation::Quantile, vec![]);
        assert_eq!(e.verdict_from_scores("t", &[0.1, 0.2, 0.3, 0.9]).unwrap(), Verdict::Pass);
        assert_eq!(e.verdict_from_scores("t", &[0.1, 0.6, 0.7, 0.9]).unwrap(), Verdict::Ensemble);
    }

    #[test]
    fn majority_is_strict() {
        let e = ens(Aggregation::Majority, vec![]);
        assert_eq!(e.verdict_from_scores("t", &[0.9, 0.1]).unwrap(), Verdict::Pass);
        assert_eq!(e.verdict_from_scores("t", &[0.9, 0.9, 0.1]).unwrap(), Verdict::Ensemble);
    }

    #[test]
    fn hard_rule_overrides_passing_scores() {
        let rule = HardRule { name: "slur".into(), pattern: Some("(?i)vermin".into()), classifier: None, confidence: 0.5 };
        let e = ens(Aggregation::WeightedBagging, vec![rule]);
        assert_eq!(e.verdict_from_scores("they are VERMIN", &[0.0, 0.0]).unwrap(), Verdict::HardRule("slur".into()));
        assert_eq!(e.verdict_from_scores("they are fine", &[0.0, 0.0]).unwrap(), Verdict::Pass);
    }

    #[test]
    fn classifier_rule_needs_confidence() {
        let e = SafetyEnsemble::new(SafetyEnsembleConfig::default()).unwrap();
        assert!(!e.verdict_from_scores("t", &[1.0, 0.1, 0.1]).unwrap().passed());
        assert!(e.verdict_from_scores("t", &[0.98, 0.1, 0.1]).unwrap().passed());
    }

    #[test]
    fn weight_length_checked() {
        let e = SafetyEnsemble::new(SafetyEnsembleConfig { weights: vec![1.0], ..Default::default() }).unwrap();
        assert_eq!(
            e.verdict_from_scores("t", &[0.1, 0.2]),
            Err(SafetyError::WeightMismatch { weights: 1, classifiers: 2 })
        );
    }
}
