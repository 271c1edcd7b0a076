//! Relevance reward for inferential edges.
//!
//! An edge X -> Y gets `effect = p_ent * (1 - p_contr)` from raw NLI
//! probabilities and, for each cost model m,
//!
//! ```text
//! cost_m = (1 - p_ent~) + lambda * p_contr~ + alpha * nll_m~ + beta1 * H_m~ + beta2 * red~
//! r_m    = ln((effect + eps) / (cost_m + eps))
//! r      = mean_m(r_m) - gamma * var_m(r_m)
//! ```
//!
//! where `~` marks min-max normalization over the sibling group (all
//! children of one parent in one expansion). Variance is the population
//! variance, logs are natural, and all sums run in input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSet, LmStats, NliScores};
use crate::domain::ScoreBreakdown;
use crate::text::{cosine, jaccard, token_set};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("non-finite value {0} in normalization input")]
    NonFiniteInput(f64),
    #[error("{weights} chain weights for {edges} edges")]
    WeightMismatch { weights: usize, edges: usize },
    #[error("chain weights must be non-negative and sum to 1")]
    InvalidWeights,
    #[error("chain has no edges")]
    EmptyChain,
    #[error("no per-model scores to aggregate")]
    NoModels,
    #[error("invalid reward configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedundancyForm {
    /// `omega_cos * (1 - cos) + omega_jac * Jac`
    #[default]
    MainText,
    /// `omega_cos * (1 - cos) + omega_jac * (1 - Jac)`
    Appendix,
}

impl std::str::FromStr for RedundancyForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main_text" => Ok(Self::MainText),
            "appendix" => Ok(Self::Appendix),
            _ => Err(format!("unknown redundancy form `{s}` (expected main_text or appendix)")),
        }
    }
}

/// Reward ablations: `WithoutCost` fixes every cost to 0, `WithoutEffect`
/// fixes effect to 1, both before epsilon is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardAblation {
    #[default]
    Full,
    WithoutCost,
    WithoutEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_contr: f64,
    pub alpha_nll: f64,
    pub beta_entropy: f64,
    pub beta_redund: f64,
    pub gamma_var: f64,
    pub epsilon: f64,
    pub omega_cos: f64,
    pub omega_jac: f64,
    pub chain_weights: Option<Vec<f64>>,
    pub redundancy_form: RedundancyForm,
    pub ablation: RewardAblation,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_contr: 0.4,
            alpha_nll: 0.5,
            beta_entropy: 0.5,
            beta_redund: 0.5,
            gamma_var: 0.2,
            epsilon: 1e-6,
            omega_cos: 0.5,
            omega_jac: 0.5,
            chain_weights: None,
            redundancy_form: RedundancyForm::MainText,
            ablation: RewardAblation::Full,
        }
    }
}

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

fn check_weights(w: &[f64]) -> Result<(), ScoringError> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(ScoringError::InvalidWeights);
    }
    Ok(())
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        for (name, v) in [
            ("lambda_contr", self.lambda_contr),
            ("alpha_nll", self.alpha_nll),
            ("beta_entropy", self.beta_entropy),
            ("beta_redund", self.beta_redund),
            ("gamma_var", self.gamma_var),
            ("omega_cos", self.omega_cos),
            ("omega_jac", self.omega_jac),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ScoringError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(ScoringError::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if let Some(w) = &self.chain_weights {
            check_weights(w)?;
        }
        Ok(())
    }
}

pub fn effect(nli: &NliScores) -> f64 {
    nli.p_ent * (1.0 - nli.p_contr)
}

/// Similarity penalty between the two ends of an edge.
pub fn redundancy(
    emb_x: &[f64],
    emb_y: &[f64],
    tokens_x: &std::collections::BTreeSet<String>,
    tokens_y: &std::collections::BTreeSet<String>,
    cfg: &RewardConfig,
) -> f64 {
    let cos_term = 1.0 - cosine(emb_x, emb_y);
    let jac = jaccard(tokens_x, tokens_y);
    let jac_term = match cfg.redundancy_form {
        RedundancyForm::MainText => jac,
        RedundancyForm::Appendix => 1.0 - jac,
    };
    (cfg.omega_cos * cos_term + cfg.omega_jac * jac_term).max(0.0)
}

/// Cost inputs for one model, already normalized within the sibling group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub p_ent: f64,
    pub p_contr: f64,
    pub nll: f64,
    pub entropy: f64,
    pub redundancy: f64,
}

pub fn cost_per_model(t: &CostTerms, cfg: &RewardConfig) -> f64 {
    (1.0 - t.p_ent)
        + cfg.lambda_contr * t.p_contr
        + cfg.alpha_nll * t.nll
        + cfg.beta_entropy * t.entropy
        + cfg.beta_redund * t.redundancy
}

/// Min-max normalization. Constant and singleton inputs map to zeros.
pub fn normalize_within_beam(values: &[f64]) -> Result<Vec<f64>, ScoringError> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(ScoringError::NonFiniteInput(*bad));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if values.len() < 2 || range <= 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / range).collect())
}

pub fn edge_relevance(effect: f64, cost: f64, eps: f64) -> f64 {
    ((effect + eps) / (cost + eps)).ln()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean minus `gamma` times the population variance.
pub fn aggregate_models(per_model: &[f64], gamma_var: f64) -> Result<f64, ScoringError> {
    if per_model.is_empty() {
        return Err(ScoringError::NoModels);
    }
    let m = mean(per_model);
    let var = per_model.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / per_model.len() as f64;
    Ok(m - gamma_var * var)
}

/// Weighted sum of edge relevances; uniform `1/T` weights by default.
pub fn chain_score(edge_relevances: &[f64], weights: Option<&[f64]>) -> Result<f64, ScoringError> {
    if edge_relevances.is_empty() {
        return Err(ScoringError::EmptyChain);
    }
    match weights {
        None => {
            let w = 1.0 / edge_relevances.len() as f64;
            Ok(edge_relevances.iter().map(|r| w * r).sum())
        }
        Some(w) => {
            if w.len() != edge_relevances.len() {
                return Err(ScoringError::WeightMismatch { weights: w.len(), edges: edge_relevances.len() });
            }
            check_weights(w)?;
            Ok(edge_relevances.iter().zip(w).map(|(r, w)| w * r).sum())
        }
    }
}

/// Backend measurements of one edge before any normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEdgeMeasurement {
    pub nli: NliScores,
    pub lm: Vec<LmStats>,
    pub redundancy: f64,
}

pub fn measure_edge(
    x: &str,
    y: &str,
    backends: &BackendSet,
    cfg: &RewardConfig,
) -> Result<RawEdgeMeasurement, BackendError> {
    let nli = backends.nli_score(x, y)?;
    let lm = (0..backends.model_count())
        .map(|m| backends.lm_stats(m, x, y))
        .collect::<Result<Vec<_>, _>>()?;
    let ex = backends.embed(x)?;
    let ey = backends.embed(y)?;
    let red = redundancy(&ex, &ey, &token_set(x), &token_set(y), cfg);
    Ok(RawEdgeMeasurement { nli, lm, redundancy: red })
}

/// Turns the raw measurements of one sibling group into score breakdowns.
/// Normalization spans the whole group, so every sibling must be present.
pub fn finalize_siblings(
    raws: &[RawEdgeMeasurement],
    cfg: &RewardConfig,
) -> Result<Vec<ScoreBreakdown>, ScoringError> {
    if raws.is_empty() {
        return Ok(Vec::new());
    }
    let models = raws[0].lm.len();
    if models == 0 || raws.iter().any(|r| r.lm.len() != models) {
        return Err(ScoringError::NoModels);
    }
    let column = |f: &dyn Fn(&RawEdgeMeasurement) -> f64| -> Vec<f64> { raws.iter().map(f).collect() };
    let n_ent = normalize_within_beam(&column(&|r| r.nli.p_ent))?;
    let n_contr = normalize_within_beam(&column(&|r| r.nli.p_contr))?;
    let n_red = normalize_within_beam(&column(&|r| r.redundancy))?;
    let mut n_nll = Vec::with_capacity(models);
    let mut n_h = Vec::with_capacity(models);
    for m in 0..models {
        n_nll.push(normalize_within_beam(&column(&|r| r.lm[m].nll))?);
        n_h.push(normalize_within_beam(&column(&|r| r.lm[m].entropy))?);
    }

    raws.iter()
        .enumerate()
        .map(|(i, raw)| {
            let eff = effect(&raw.nli);
            let eff_used = match cfg.ablation {
                RewardAblation::WithoutEffect => 1.0,
                _ => eff,
            };
            let cost_per: Vec<f64> = (0..models)
                .map(|m| match cfg.ablation {
                    RewardAblation::WithoutCost => 0.0,
                    _ => cost_per_model(
                        &CostTerms {
                            p_ent: n_ent[i],
                            p_contr: n_contr[i],
                            nll: n_nll[m][i],
                            entropy: n_h[m][i],
                            redundancy: n_red[i],
                        },
                        cfg,
                    ),
                })
                .collect();
            let rel_per: Vec<f64> = cost_per.iter().map(|c| edge_relevance(eff_used, *c, cfg.epsilon)).collect();
            let relevance = aggregate_models(&rel_per, cfg.gamma_var)?;
            let nll_per: Vec<f64> = raw.lm.iter().map(|s| s.nll).collect();
            let h_per: Vec<f64> = raw.lm.iter().map(|s| s.entropy).collect();
            Ok(ScoreBreakdown {
                p_ent: raw.nli.p_ent,
                p_contr: raw.nli.p_contr,
                nll: mean(&nll_per),
                entropy: mean(&h_per),
                redundancy: raw.redundancy,
                effect: eff,
                nll_per_model: nll_per,
                entropy_per_model: h_per,
                cost_per_model: cost_per,
                relevance_per_model: rel_per,
                relevance,
            })
        })
        .collect()
}

/// Measures a sibling group of `(antecedent, conclusion)` edges concurrently
/// and scores them together.
pub fn score_siblings(
    edges: &[(String, String)],
    backends: &BackendSet,
    cfg: &RewardConfig,
) -> Result<Vec<ScoreBreakdown>, ScoringError> {
    let raws = edges
        .par_iter()
        .map(|(x, y)| measure_edge(x, y, backends, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    finalize_siblings(&raws, cfg)
}

/// Scores `x -> y` inside its sibling group `siblings`, which must contain
/// the edge itself.
pub fn score_edge(
    x: &str,
    y: &str,
    siblings: &[(String, String)],
    backends: &BackendSet,
    cfg: &RewardConfig,
) -> Result<ScoreBreakdown, ScoringError> {
    let idx = siblings
        .iter()
        .position(|(a, b)| a == x && b == y)
        .ok_or_else(|| ScoringError::InvalidConfig("edge is not part of its sibling group".into()))?;
    Ok(score_siblings(siblings, backends, cfg)?.swap_remove(idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn effect_examples() {
        let s = |e, c| NliScores { p_ent: e, p_neu: 1.0 - e - c, p_contr: c };
        assert_eq!(effect(&s(1.0, 0.0)), 1.0);
        assert_eq!(effect(&s(0.0, 0.7)), 0.0);
        assert!(close(effect(&s(0.8, 0.2 * 1.25)), 0.6));
    }

    #[test]
    fn redundancy_examples() {
        let cfg = RewardConfig::default();
        let t: BTreeSet<String> = ["a".to_string(), "b".to_string()].into();
        assert!(close(redundancy(&[1.0, 0.0], &[1.0, 0.0], &t, &t, &cfg), 0.5));
        let u: BTreeSet<String> = ["c".to_string()].into();
        assert!(close(redundancy(&[1.0, 0.0], &[0.0, 1.0], &t, &u, &cfg), 0.5));
        let zero = RewardConfig { omega_cos: 0.0, omega_jac: 0.0, ..cfg.clone() };
        assert_eq!(redundancy(&[1.0, 0.0], &[0.0, 1.0], &t, &t, &zero), 0.0);
        let app = RewardConfig { redundancy_form: RedundancyForm::Appendix, ..cfg };
        assert!(close(redundancy(&[1.0, 0.0], &[1.0, 0.0], &t, &t, &app), 0.0));
    }

    #[test]
    fn cost_examples() {
        let cfg = RewardConfig::default();
        let t = |p_ent, p_contr, nll, entropy, redundancy| CostTerms { p_ent, p_contr, nll, entropy, redundancy };
        assert_eq!(cost_per_model(&t(1.0, 0.0, 0.0, 0.0, 0.0), &cfg), 0.0);
        assert!(close(cost_per_model(&t(0.6, 0.4, 0.0, 0.0, 0.0), &cfg), 0.56));
        assert!(close(cost_per_model(&t(1.0, 0.0, 1.0, 1.0, 1.0), &cfg), 1.5));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_within_beam(&[1.0, 3.0, 5.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_within_beam(&[7.0, 7.0, 7.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(normalize_within_beam(&[4.0]).unwrap(), vec![0.0]);
        assert!(matches!(normalize_within_beam(&[1.0, f64::NAN]), Err(ScoringError::NonFiniteInput(_))));
        assert!(matches!(normalize_within_beam(&[f64::INFINITY]), Err(ScoringError::NonFiniteInput(_))));
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(edge_relevance(0.3, 0.3, 1e-6), 0.0);
        assert!((edge_relevance(1.0, 0.0, 1e-6) - 13.815_511_557_963_774).abs() < 1e-9);
        assert!((edge_relevance(0.0, 1.0, 1e-6) + 13.815_511_557_963_774).abs() < 1e-9);
    }

    #[test]
    fn aggregation_examples() {
        assert!(close(aggregate_models(&[0.7, 0.7, 0.7], 0.2).unwrap(), 0.7));
        assert!(close(aggregate_models(&[1.0, 2.0, 6.0], 0.0).unwrap(), 3.0));
        assert!(close(aggregate_models(&[1.0, 3.0], 0.2).unwrap(), 1.8));
        assert_eq!(aggregate_models(&[], 0.2), Err(ScoringError::NoModels));
    }

    #[test]
    fn chain_examples() {
        assert!(close(chain_score(&[2.0, 4.0], None).unwrap(), 3.0));
        assert_eq!(chain_score(&[5.0, 9.0, -1.0], Some(&[1.0, 0.0, 0.0])).unwrap(), 5.0);
        assert!(close(chain_score(&[1.0, -0.5, 0.7], Some(&[0.5, 0.3, 0.2])).unwrap(), 0.49));
        assert_eq!(
            chain_score(&[1.0], Some(&[0.5, 0.5])),
            Err(ScoringError::WeightMismatch { weights: 2, edges: 1 })
        );
        assert_eq!(chain_score(&[], None), Err(ScoringError::EmptyChain));
    }

    #[test]
    fn defaults_validate() {
        RewardConfig::default().validate().unwrap();
        assert!(RewardConfig { epsilon: 0.0, ..RewardConfig::default() }.validate().is_err());
        assert!(RewardConfig { chain_weights: Some(vec![0.7, 0.7]), ..RewardConfig::default() }
            .validate()
            .is_err());
    }

    fn raw(p_ent: f64, p_contr: f64, lm: &[(f64, f64)], red: f64) -> RawEdgeMeasurement {
        RawEdgeMeasurement {
            nli: NliScores { p_ent, p_neu: 1.0 - p_ent - p_contr, p_contr },
            lm: lm.iter().map(|&(nll, entropy)| LmStats { nll, entropy }).collect(),
            redundancy: red,
        }
    }

    #[test]
    fn single_model_has_no_variance_term() {
        let cfg = RewardConfig::default();
        let out = finalize_siblings(&[raw(0.9, 0.05, &[(1.0, 2.0)], 0.3), raw(0.7, 0.1, &[(2.0, 1.0)], 0.4)], &cfg)
            .unwrap();
        for b in &out {
            assert_eq!(b.relevance, b.relevance_per_model[0]);
        }
    }

    #[test]
    fn lowest_effect_sibling_ranks_last_when_costs_tie() {
        let cfg = RewardConfig::default();
        let lm = [(1.0, 1.0), (1.5, 0.5)];
        let raws = [raw(0.9, 0.01, &lm, 0.2), raw(0.6, 0.01, &lm, 0.2), raw(0.8, 0.01, &lm, 0.2)];
        let out = finalize_siblings(&raws, &cfg).unwrap();
        let min = out.iter().map(|b| b.relevance).fold(f64::INFINITY, f64::min);
        assert_eq!(out[1].relevance, min);
    }

    #[test]
    fn ablations_fix_terms_before_epsilon() {
        let raws = [raw(0.9, 0.05, &[(1.0, 2.0)], 0.3), raw(0.7, 0.1, &[(2.0, 1.0)], 0.4)];
        let no_cost = RewardConfig { ablation: RewardAblation::WithoutCost, ..RewardConfig::default() };
        let out = finalize_siblings(&raws, &no_cost).unwrap();
        assert!(close(out[0].relevance, ((0.9 * 0.95 + 1e-6) / 1e-6f64).ln()));
        let no_eff = RewardConfig { ablation: RewardAblation::WithoutEffect, ..RewardConfig::default() };
        let out = finalize_siblings(&raws, &no_eff).unwrap();
        let c = out[0].cost_per_model[0];
        assert!(close(out[0].relevance, ((1.0 + 1e-6) / (c + 1e-6)).ln()));
        assert!(close(out[0].effect, 0.9 * 0.95));
    }
}
