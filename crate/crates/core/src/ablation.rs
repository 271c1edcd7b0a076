//! Generation-strategy comparison: the reward variants of the search and
//! the single-shot prompting baselines, all scored against the original
//! standpoint under the full reward.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::BackendSet;
use crate::domain::{SeedRef, TargetGroupRef};
use crate::prompts::PromptSet;
use crate::safety::SafetyEnsemble;
use crate::scoring::RewardAblation;
use crate::search::{rejection_rate, rescore, score_baselines, BaselineMode, SearchConfig, SearchError, Searcher};

/// One seed of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSeed {
    /// Target-substituted standpoint.
    pub standpoint: String,
    pub target_group: TargetGroupRef,
    pub seed: SeedRef,
    /// Original post, input of the paraphrase and CoT baselines.
    pub hard_seed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub n: usize,
    /// Seeds with a usable output (a completed chain or a non-refused text).
    pub completed: usize,
    /// Percentage of refused generator outputs.
    pub rejection_rate: f64,
    pub psi_mean: Option<f64>,
    /// Population standard deviation.
    pub psi_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: usize,
    pub methods: Vec<MethodRow>,
}

impl AblationReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|r| r.method == method)
    }
}

pub fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(v.sqrt()))
}

pub fn variant_name(a: RewardAblation) -> &'static str {
    match a {
        RewardAblation::Full => "ours",
        RewardAblation::WithoutCost => "without_cost",
        RewardAblation::WithoutEffect => "without_effect",
    }
}

/// Search under one reward variant. Selections are rescored with the full
/// reward; the rejection rate is refusals over generated candidates.
pub fn run_variant(
    seeds: &[AblationSeed],
    variant: RewardAblation,
    backends: &BackendSet,
    prompts: &PromptSet,
    safety: &SafetyEnsemble,
    cfg: &SearchConfig,
) -> Result<MethodRow, SearchError> {
    let mut vcfg = cfg.clone();
    vcfg.reward.ablation = variant;
    let mut full = cfg.reward.clone();
    full.ablation = RewardAblation::Full;
    let searcher = Searcher::new(backends, prompts, safety, &vcfg);
    let results = seeds
        .par_iter()
        .map(|s| match searcher.run_traced(&s.standpoint, &s.target_group, &s.seed) {
            (Ok(o), st, _) => Ok((Some(rescore(&o, &full)?), st)),
            (Err(SearchError::BeamExhausted { .. }), st, _) => Ok((None, st)),
            (Err(e), _, _) => Err(e),
        })
        .collect::<Result<Vec<_>, SearchError>>()?;
    let mut generated = 0;
    let mut refused = 0;
    let mut psis = Vec::new();
    for (psi, st) in results {
        generated += st.generated;
        refused += st.refusals;
        psis.extend(psi);
    }
    let (psi_mean, psi_sd) = mean_sd(&psis);
    Ok(MethodRow {
        method: variant_name(variant).to_string(),
        n: seeds.len(),
        completed: psis.len(),
        rejection_rate: if generated == 0 { 0.0 } else { 100.0 * refused as f64 / generated as f64 },
        psi_mean,
        psi_sd,
    })
}

/// One baseline over all seeds. Direct prompting receives the standpoint;
/// paraphrase and CoT receive the hard seed.
pub fn run_baseline(
    seeds: &[AblationSeed],
    mode: BaselineMode,
    backends: &BackendSet,
    prompts: &PromptSet,
    safety: &SafetyEnsemble,
    cfg: &SearchConfig,
) -> Result<MethodRow, SearchError> {
    let mut full = cfg.reward.clone();
    full.ablation = RewardAblation::Full;
    let searcher = Searcher::new(backends, prompts, safety, cfg);
    let outputs = seeds
        .par_iter()
        .map(|s| {
            let input = if mode == BaselineMode::Direct { &s.standpoint } else { &s.hard_seed };
            searcher.baseline_generate(mode, input, &s.target_group)
        })
        .collect::<Result<Vec<_>, SearchError>>()?;
    let pairs: Vec<_> = outputs.iter().cloned().zip(seeds.iter().map(|s| s.standpoint.clone())).collect();
    let psis: Vec<f64> = score_baselines(&pairs, backends, &full)?.into_iter().flatten().collect();
    let (psi_mean, psi_sd) = mean_sd(&psis);
    Ok(MethodRow {
        method: mode.as_str().to_string(),
        n: seeds.len(),
        completed: psis.len(),
        rejection_rate: rejection_rate(&outputs),
        psi_mean,
        psi_sd,
    })
}

/// Baselines first, then the three reward variants.
pub fn run_ablation(
    seeds: &[AblationSeed],
    backends: &BackendSet,
    prompts: &PromptSet,
    safety: &SafetyEnsemble,
    cfg: &SearchConfig,
) -> Result<AblationReport, SearchError> {
    let mut methods = Vec::new();
    for mode in BaselineMode::ALL {
        methods.push(run_baseline(seeds, mode, backends, prompts, safety, cfg)?);
    }
    for v in [RewardAblation::Full, RewardAblation::WithoutCost, RewardAblation::WithoutEffect] {
        methods.push(run_variant(seeds, v, backends, prompts, safety, cfg)?);
    }
    Ok(AblationReport { seeds: seeds.len(), methods })
}
