//! Reverse generation of argument chains by beam search.
//!
//! Starting from a standpoint S and a sampled locus L, the search runs two
//! typed stages:
//!
//! 1. S -> candidate (P, M) pairs, scored as edges `"P M" -> S`;
//! 2. each surviving P -> candidate (E, D) pairs, scored as `"E D" -> P`.
//!
//! Siblings from one parent are scored together, inadmissible edges are
//! dropped, and the beam keeps the best `B` states by cumulative relevance.
//! Once every surviving state is complete, the chain with the highest
//! weighted chain score is returned.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSet, Candidate, GenHints, GenRequest, GenTask};
use crate::domain::{
    AmtInstance, ArgEdge, ChainLink, LocusId, LocusPool, ScoreBreakdown, SeedRef, TargetGroupRef,
};
use crate::hashing::{content_hash, seed64};
use crate::parse::{parse_endoxon_datum, parse_final_answer, parse_premise_maxim, ParseFailure};
use crate::prompts::{self, PromptError, PromptSet};
use crate::safety::{SafetyEnsemble, SafetyError, Verdict};
use crate::scoring::{chain_score, finalize_siblings, measure_edge, RawEdgeMeasurement, RewardConfig, ScoringError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("locus pool is empty")]
    EmptyPool,
    #[error("no admissible expansion at stage {stage}")]
    BeamExhausted { stage: Stage },
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub beam_size: usize,
    /// Number of typed stages; only the two-stage chain S -> P -> (E, D) is supported.
    pub max_steps: usize,
    pub k_premise: usize,
    /// Decompositions requested per premise; defaults to `k_premise`.
    pub k_decompose: Option<usize>,
    pub tau_ent: f64,
    pub tau_contr: f64,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Re-sampled attempts per stage after the first one.
    pub retry_budget: usize,
    pub rng_seed: u64,
    pub locus_pool: LocusPool,
    pub reward: RewardConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            beam_size: 3,
            max_steps: 2,
            k_premise: 5,
            k_decompose: None,
            tau_ent: 0.6,
            tau_contr: 0.4,
            temperature: crate::backends::DEFAULT_TEMPERATURE,
            max_tokens: crate::backends::DEFAULT_MAX_TOKENS,
            retry_budget: 3,
            rng_seed: 0,
            locus_pool: LocusPool::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.beam_size == 0 || self.k_premise == 0 || self.k_decompose == Some(0) || self.max_tokens == 0 {
            return Err(SearchError::InvalidConfig("beam_size, k_premise, k_decompose and max_tokens must be positive".into()));
        }
        if self.max_steps != 2 {
            return Err(SearchError::InvalidConfig(format!("max_steps must be 2, got {}", self.max_steps)));
        }
        for (n, v) in [("tau_ent", self.tau_ent), ("tau_contr", self.tau_contr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SearchError::InvalidConfig(format!("{n} outside [0,1]")));
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(SearchError::InvalidConfig("temperature must be >= 0".into()));
        }
        self.reward.validate()?;
        if let Some(w) = &self.reward.chain_weights {
            if w.len() != self.max_steps {
                return Err(SearchError::InvalidConfig(format!("{} chain weights for {} steps", w.len(), self.max_steps)));
            }
        }
        Ok(())
    }

    pub fn k_decompose(&self) -> usize {
        self.k_decompose.unwrap_or(self.k_premise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AtStandpoint,
    AtPremise,
    Complete,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::AtStandpoint => "at_standpoint",
            Stage::AtPremise => "at_premise",
            Stage::Complete => "complete",
        })
    }
}

/// A partial chain and its cumulative relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub partial_chain: Vec<ArgEdge>,
    pub cumulative_score: f64,
}

impl SearchState {
    pub fn root() -> Self {
        Self { partial_chain: Vec::new(), cumulative_score: 0.0 }
    }

    pub fn stage(&self) -> Stage {
        match self.partial_chain.len() {
            0 => Stage::AtStandpoint,
            1 => Stage::AtPremise,
            _ => Stage::Complete,
        }
    }

    pub fn content_hash(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        for e in &self.partial_chain {
            match &e.link {
                ChainLink::Procedural { premise, maxim } => parts.extend(["P".into(), premise.clone(), maxim.clone()]),
                ChainLink::Material { endoxon, datum } => parts.extend(["M".into(), endoxon.clone(), datum.clone()]),
            }
            parts.push(e.conclusion.clone());
        }
        content_hash(&parts)
    }

    fn premise_maxim(&self) -> Option<(&str, &str)> {
        self.partial_chain.iter().find_map(|e| match &e.link {
            ChainLink::Procedural { premise, maxim } => Some((premise.as_str(), maxim.as_str())),
            _ => None,
        })
    }

    fn endoxon_datum(&self) -> Option<(&str, &str)> {
        self.partial_chain.iter().find_map(|e| match &e.link {
            ChainLink::Material { endoxon, datum } => Some((endoxon.as_str(), datum.as_str())),
            _ => None,
        })
    }
}

/// Uniform draw from the pool, determined by `seed`.
pub fn sample_locus(pool: &[LocusId], seed: u64) -> Result<LocusId, SearchError> {
    if pool.is_empty() {
        return Err(SearchError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pool[rng.random_range(0..pool.len())].clone())
}

/// Raw-threshold gate: `p_ent >= tau_ent`, `p_contr <= tau_contr` and a
/// passing safety verdict.
pub fn admissible(edge: &ScoreBreakdown, verdict: &Verdict, cfg: &SearchConfig) -> bool {
    edge.p_ent >= cfg.tau_ent && edge.p_contr <= cfg.tau_contr && verdict.passed()
}

/// Extends parents with their admissible expansions `(parent index, edge)`
/// and keeps the best `b` by cumulative score, ties broken by content hash.
pub fn beam_step(beam: &[SearchState], expansions: Vec<(usize, ArgEdge)>, b: usize) -> Result<Vec<SearchState>, SearchError> {
    let stage = beam.first().map(SearchState::stage).unwrap_or(Stage::AtStandpoint);
    if expansions.is_empty() {
        return Err(SearchError::BeamExhausted { stage });
    }
    let mut next: Vec<(SearchState, String)> = expansions
        .into_iter()
        .map(|(parent, edge)| {
            let mut s = beam[parent].clone();
            s.cumulative_score += edge.score.relevance;
            s.partial_chain.push(edge);
            let h = s.content_hash();
            (s, h)
        })
        .collect();
    next.sort_by(|(a, ha), (b, hb)| b.cumulative_score.total_cmp(&a.cumulative_score).then_with(|| ha.cmp(hb)));
    next.truncate(b);
    Ok(next.into_iter().map(|(s, _)| s).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOutcome {
    Scored,
    Refused,
    ParseFailure,
}

/// One line of the per-seed search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seed_id: String,
    pub stage: Stage,
    pub attempt: usize,
    pub parent: Option<usize>,
    pub candidate: usize,
    pub outcome: CandidateOutcome,
    pub raw_text: String,
    pub link: Option<ChainLink>,
    pub conclusion: Option<String>,
    pub score: Option<ScoreBreakdown>,
    pub verdict: Option<Verdict>,
    pub admissible: bool,
    pub in_beam: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub generated: usize,
    pub refusals: usize,
    pub parse_failures: usize,
    pub inadmissible: usize,
    pub retries: usize,
}

impl SearchStats {
    pub fn add(&mut self, o: &SearchStats) {
        self.generated += o.generated;
        self.refusals += o.refusals;
        self.parse_failures += o.parse_failures;
        self.inadmissible += o.inadmissible;
        self.retries += o.retries;
    }
}

/// Raw measurements of one sibling group, kept so a chain can be rescored
/// under a different reward configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiblingGroup {
    pub stage: Stage,
    pub parent: Option<ChainLink>,
    pub conclusion: String,
    pub links: Vec<ChainLink>,
    pub raws: Vec<RawEdgeMeasurement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub instance: AmtInstance,
    pub stats: SearchStats,
    pub groups: Vec<SiblingGroup>,
    pub trace: Vec<TraceEvent>,
}

/// Parsed candidates of one generator call plus their trace events.
#[derive(Debug, Clone, Default)]
pub struct Expansion {
    pub pairs: Vec<(String, String)>,
    pub events: Vec<TraceEvent>,
    pub stats: SearchStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Direct,
    Paraphrase,
    Cot,
}

impl BaselineMode {
    pub const ALL: [BaselineMode; 3] = [BaselineMode::Direct, BaselineMode::Paraphrase, BaselineMode::Cot];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::Direct => "direct",
            BaselineMode::Paraphrase => "paraphrase",
            BaselineMode::Cot => "cot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "text", rename_all = "snake_case")]
pub enum BaselineOutput {
    Text(String),
    Refused(String),
}

/// Percentage of refused outputs.
pub fn rejection_rate(outputs: &[BaselineOutput]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let refused = outputs.iter().filter(|o| matches!(o, BaselineOutput::Refused(_))).count();
    100.0 * refused as f64 / outputs.len() as f64
}

/// Everything a search needs besides its inputs.
#[derive(Clone, Copy)]
pub struct Searcher<'a> {
    pub backends: &'a BackendSet,
    pub prompts: &'a PromptSet,
    pub safety: &'a SafetyEnsemble,
    pub cfg: &'a SearchConfig,
}

impl<'a> Searcher<'a> {
    pub fn new(backends: &'a BackendSet, prompts: &'a PromptSet, safety: &'a SafetyEnsemble, cfg: &'a SearchConfig) -> Self {
        Self { backends, prompts, safety, cfg }
    }

    fn request(&self, prompt: String, n: usize, task: GenTask, tg: &TargetGroupRef) -> GenRequest {
        GenRequest::new(prompt, n)
            .with_settings(self.cfg.temperature, self.cfg.max_tokens)
            .with_hints(GenHints { task, target: Some(tg.level2.clone()), options: Vec::new() })
    }

    fn collect(
        &self,
        seed_id: &str,
        stage: Stage,
        attempt: usize,
        parent: Option<usize>,
        req: &GenRequest,
        parse: fn(&str) -> Result<(String, String), ParseFailure>,
    ) -> Result<Expansion, SearchError> {
        let mut out = Expansion::default();
        let mut seen = BTreeSet::new();
        for (i, c) in self.backends.generate(req)?.into_iter().enumerate() {
            out.stats.generated += 1;
            let mut ev = TraceEvent {
                seed_id: seed_id.to_string(),
                stage,
                attempt,
                parent,
                candidate: i,
                outcome: CandidateOutcome::Scored,
                raw_text: String::new(),
                link: None,
                conclusion: None,
                score: None,
                verdict: None,
                admissible: false,
                in_beam: false,
            };
            match c {
                Candidate::Refused(t) => {
                    out.stats.refusals += 1;
                    ev.outcome = CandidateOutcome::Refused;
                    ev.raw_text = t;
                    out.events.push(ev);
                }
                Candidate::Text(t) => match parse(&t) {
                    Err(e) => {
                        log::debug!("{seed_id}: dropping unparseable candidate: {e}");
                        out.stats.parse_failures += 1;
                        ev.outcome = CandidateOutcome::ParseFailure;
                        ev.raw_text = t;
                        out.events.push(ev);
                    }
                    Ok(pair) => {
                        if seen.insert(pair.clone()) {
                            ev.raw_text = t;
                            out.events.push(ev);
                            out.pairs.push(pair);
                        }
                    }
                },
            }
        }
        Ok(out)
    }

    /// Requests `k_premise` (premise, maxim) candidates for a standpoint.
    pub fn expand_premises(
        &self,
        standpoint: &str,
        locus: &LocusId,
        tg: &TargetGroupRef,
        attempt: usize,
    ) -> Result<Expansion, SearchError> {
        let prompt = self.prompts.render(
            prompts::PREMISE_EXPANSION,
            &[("standpoint", standpoint), ("locus", &locus.name), ("locus_description", &locus.scheme_description)],
        )?;
        let req = self.request(prompts::with_attempt(&prompt, attempt), self.cfg.k_premise, GenTask::PremiseExpansion, tg);
        self.collect("", Stage::AtStandpoint, attempt, None, &req, parse_premise_maxim)
    }

    /// Requests `k_decompose` (endoxon, datum) candidates for a premise.
    pub fn decompose_premise(&self, premise: &str, tg: &TargetGroupRef, attempt: usize) -> Result<Expansion, SearchError> {
        let prompt = self.prompts.render(prompts::DECOMPOSITION, &[("premise", premise), ("target", &tg.level2)])?;
        let req = self.request(prompts::with_attempt(&prompt, attempt), self.cfg.k_decompose(), GenTask::Decomposition, tg);
        self.collect("", Stage::AtPremise, attempt, None, &req, parse_endoxon_datum)
    }

    fn locus_seed(&self, standpoint: &str, seed: &SeedRef) -> u64 {
        seed64(&[self.cfg.rng_seed.to_le_bytes().as_slice(), standpoint.as_bytes(), seed.seed_hash.as_bytes()])
    }

    /// Scores one sibling group and gates each edge.
    fn score_group(
        &self,
        links: &[ChainLink],
        conclusion: &str,
    ) -> Result<(Vec<RawEdgeMeasurement>, Vec<ScoreBreakdown>, Vec<Verdict>), SearchError> {
        use rayon::prelude::*;
        let measured = links
            .par_iter()
            .map(|l| {
                let x = l.antecedent_text();
                let raw = measure_edge(&x, conclusion, self.backends, &self.cfg.reward)?;
                let verdict = self.safety.verdict(&x, self.backends)?;
                Ok((raw, verdict))
            })
            .collect::<Result<Vec<_>, SearchError>>()?;
        let (raws, verdicts): (Vec<_>, Vec<_>) = measured.into_iter().unzip();
        let scores = finalize_siblings(&raws, &self.cfg.reward)?;
        Ok((raws, scores, verdicts))
    }

    /// Runs one typed stage over the whole beam, with re-sampled retries
    /// while no admissible expansion exists.
    fn run_stage(
        &self,
        seed_id: &str,
        beam: &[SearchState],
        standpoint: &str,
        locus: &LocusId,
        tg: &TargetGroupRef,
        out: &mut StageLog,
    ) -> Result<Vec<SearchState>, SearchError> {
        let stage = beam[0].stage();
        for attempt in 0..=self.cfg.retry_budget {
            if attempt > 0 {
                out.stats.retries += 1;
            }
            let mut expansions = Vec::new();
            let mut event_index = Vec::new();
            for (pi, parent) in beam.iter().enumerate() {
                let (mut exp, conclusion, parent_link) = match stage {
                    Stage::AtStandpoint => (self.expand_premises(standpoint, locus, tg, attempt)?, standpoint.to_string(), None),
                    _ => {
                        let (p, m) = parent.premise_maxim().expect("stage-2 parent has a premise");
                        let link = ChainLink::Procedural { premise: p.into(), maxim: m.into() };
                        (self.decompose_premise(p, tg, attempt)?, p.to_string(), Some(link))
                    }
                };
                out.stats.add(&exp.stats);
                let links: Vec<ChainLink> = exp
                    .pairs
                    .iter()
                    .map(|(a, b)| match stage {
                        Stage::AtStandpoint => ChainLink::Procedural { premise: a.clone(), maxim: b.clone() },
                        _ => ChainLink::Material { endoxon: a.clone(), datum: b.clone() },
                    })
                    .collect();
                let scored_events: Vec<usize> = exp
                    .events
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.outcome == CandidateOutcome::Scored)
                    .map(|(i, _)| i)
                    .collect();
                let first_event = out.trace.len();
                for e in &mut exp.events {
                    e.seed_id = seed_id.to_string();
                    e.parent = (stage != Stage::AtStandpoint).then_some(pi);
                }
                if !links.is_empty() {
                    let (raws, scores, verdicts) = self.score_group(&links, &conclusion)?;
                    for (k, ((link, score), verdict)) in links.iter().zip(scores).zip(verdicts).enumerate() {
                        let ok = admissible(&score, &verdict, self.cfg);
                        let ev = &mut exp.events[scored_events[k]];
                        ev.link = Some(link.clone());
                        ev.conclusion = Some(conclusion.clone());
                        ev.score = Some(score.clone());
                        ev.verdict = Some(verdict);
                        ev.admissible = ok;
                        if ok {
                            let edge = ArgEdge { link: link.clone(), conclusion: conclusion.clone(), score };
                            event_index.push(first_event + scored_events[k]);
                            expansions.push((pi, edge));
                        } else {
                            out.stats.inadmissible += 1;
                        }
                    }
                    out.groups.push(SiblingGroup {
                        stage,
                        parent: parent_link,
                        conclusion: conclusion.clone(),
                        links,
                        raws,
                    });
                }
                out.trace.extend(exp.events);
            }
            if expansions.is_empty() {
                log::debug!("{seed_id}: no admissible expansion at {stage}, attempt {}", attempt + 1);
                continue;
            }
            let hashes: Vec<String> = expansions
                .iter()
                .map(|(p, e)| {
                    let mut s = beam[*p].clone();
                    s.partial_chain.push(e.clone());
                    s.content_hash()
                })
                .collect();
            if stage == Stage::AtPremise {
                out.completed = expansions
                    .iter()
                    .map(|(p, e)| {
                        let mut s = beam[*p].clone();
                        s.cumulative_score += e.score.relevance;
                        s.partial_chain.push(e.clone());
                        s
                    })
                    .collect();
            }
            let next = beam_step(beam, expansions, self.cfg.beam_size)?;
            let kept: BTreeSet<String> = next.iter().map(SearchState::content_hash).collect();
            for (idx, h) in event_index.iter().zip(&hashes) {
                out.trace[*idx].in_beam = kept.contains(h);
            }
            return Ok(next);
        }
        Err(SearchError::BeamExhausted { stage })
    }

    /// Full search for one standpoint. `standpoint` is already
    /// target-substituted.
    pub fn run(&self, standpoint: &str, tg: &TargetGroupRef, seed: &SeedRef) -> Result<SearchOutcome, SearchError> {
        self.run_traced(standpoint, tg, seed).0
    }

    /// Like [`Searcher::run`], but also returns the candidate accounting and
    /// trace gathered before a failure.
    pub fn run_traced(
        &self,
        standpoint: &str,
        tg: &TargetGroupRef,
        seed: &SeedRef,
    ) -> (Result<SearchOutcome, SearchError>, SearchStats, Vec<TraceEvent>) {
        let mut log = StageLog::default();
        match self.run_logged(standpoint, tg, seed, &mut log) {
            Ok(o) => {
                let stats = o.stats.clone();
                (Ok(o), stats, Vec::new())
            }
            Err(e) => (Err(e), log.stats, log.trace),
        }
    }

    fn run_logged(&self, standpoint: &str, tg: &TargetGroupRef, seed: &SeedRef, log: &mut StageLog) -> Result<SearchOutcome, SearchError> {
        self.cfg.validate()?;
        let locus = sample_locus(self.cfg.locus_pool.as_slice(), self.locus_seed(standpoint, seed))?;
        let seed_id = seed.source_id.as_str();
        let beam = vec![SearchState::root()];
        let beam = self.run_stage(seed_id, &beam, standpoint, &locus, tg, log)?;
        self.run_stage(seed_id, &beam, standpoint, &locus, tg, log)?;

        let weights = self.cfg.reward.chain_weights.as_deref();
        let mut best: Option<(f64, String, SearchState)> = None;
        for s in std::mem::take(&mut log.completed) {
            let rel: Vec<f64> = s.partial_chain.iter().map(|e| e.score.relevance).collect();
            let psi = chain_score(&rel, weights)?;
            let h = s.content_hash();
            let better = match &best {
                None => true,
                Some((bp, bh, _)) => psi > *bp || (psi == *bp && h < *bh),
            };
            if better {
                best = Some((psi, h, s));
            }
        }
        let (psi, _, state) = best.ok_or(SearchError::BeamExhausted { stage: Stage::AtPremise })?;
        let (premise, maxim) = state.premise_maxim().expect("complete chain");
        let (endoxon, datum) = state.endoxon_datum().expect("complete chain");
        let instance = AmtInstance {
            endoxon: endoxon.to_string(),
            datum: datum.to_string(),
            premise: premise.to_string(),
            locus,
            maxim: maxim.to_string(),
            standpoint: standpoint.to_string(),
            target_group: tg.clone(),
            chain_score: psi,
            provenance: seed.clone(),
            edges: state.partial_chain.clone(),
        };
        Ok(SearchOutcome {
            instance,
            stats: std::mem::take(&mut log.stats),
            groups: std::mem::take(&mut log.groups),
            trace: std::mem::take(&mut log.trace),
        })
    }

    /// One baseline generation call; refusals are returned, not raised.
    pub fn baseline_generate(&self, mode: BaselineMode, input: &str, tg: &TargetGroupRef) -> Result<BaselineOutput, SearchError> {
        let (name, task) = match mode {
            BaselineMode::Direct => (prompts::BASELINE_DIRECT, GenTask::BaselineDirect),
            BaselineMode::Paraphrase => (prompts::BASELINE_PARAPHRASE, GenTask::BaselineParaphrase),
            BaselineMode::Cot => (prompts::BASELINE_COT, GenTask::BaselineCot),
        };
        let prompt = self.prompts.render(name, &[("input", input), ("target", &tg.level2)])?;
        let req = self.request(prompt, 1, task, tg);
        match self.backends.generate(&req)?.pop() {
            Some(Candidate::Text(t)) => {
                let text = if mode == BaselineMode::Cot { parse_final_answer(&t).unwrap_or(t) } else { t };
                Ok(BaselineOutput::Text(text))
            }
            Some(Candidate::Refused(t)) => Ok(BaselineOutput::Refused(t)),
            None => Err(BackendError::MalformedResponse("no candidate".into()).into()),
        }
    }
}

#[derive(Debug, Default)]
struct StageLog {
    stats: SearchStats,
    groups: Vec<SiblingGroup>,
    trace: Vec<TraceEvent>,
    completed: Vec<SearchState>,
}

/// Relevance of baseline outputs against their standpoints. All texts of
/// one mode form a single normalization group; refusals score `None`.
pub fn score_baselines(
    outputs: &[(BaselineOutput, String)],
    backends: &BackendSet,
    reward: &RewardConfig,
) -> Result<Vec<Option<f64>>, SearchError> {
    let edges: Vec<(String, String)> = outputs
        .iter()
        .filter_map(|(o, s)| match o {
            BaselineOutput::Text(t) => Some((t.clone(), s.clone())),
            BaselineOutput::Refused(_) => None,
        })
        .collect();
    let mut scores = crate::scoring::score_siblings(&edges, backends, reward)?.into_iter();
    Ok(outputs
        .iter()
        .map(|(o, _)| match o {
            BaselineOutput::Text(_) => scores.next().map(|b| b.relevance),
            BaselineOutput::Refused(_) => None,
        })
        .collect())
}

/// Chain score of the outcome's instance recomputed from stored raw
/// measurements under `reward`.
pub fn rescore(outcome: &SearchOutcome, reward: &RewardConfig) -> Result<f64, SearchError> {
    let inst = &outcome.instance;
    let mut rel = Vec::with_capacity(inst.edges.len());
    for (i, edge) in inst.edges.iter().enumerate() {
        let parent = if i == 0 { None } else { Some(&inst.edges[0].link) };
        let (group, k) = outcome
            .groups
            .iter()
            .rev()
            .filter(|g| g.parent.as_ref() == parent && g.conclusion == edge.conclusion)
            .find_map(|g| g.links.iter().position(|l| *l == edge.link).map(|k| (g, k)))
            .ok_or_else(|| SearchError::InvalidConfig("outcome lacks the sibling group of an edge".into()))?;
        rel.push(finalize_siblings(&group.raws, reward)?[k].relevance);
    }
    Ok(chain_score(&rel, reward.chain_weights.as_deref())?)
}
