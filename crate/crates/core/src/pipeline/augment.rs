//! Difficulty tiers and non-hate counterparts.
//!
//! Both tiers are best-of-N: every admissible candidate `Y` is scored
//! `cos(emb X, emb Y) + p_ent(X => Y)` against the original surface text
//! `X`, and the first maximum wins.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_first, PipelineError};
use crate::backends::{BackendSet, Candidate, GenHints, GenRequest, GenTask, NliLabel};
use crate::domain::{family_id, join_sentences, AmtInstance, NaturalPost, TargetGroupRef, TierFamily, DEFAULT_PLACEHOLDER};
use crate::parse::parse_single_answer;
use crate::prompts::{self, PromptSet};
use crate::text::{contains_ci, cosine, replace_ci};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub n_candidates: usize,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { n_candidates: 10, temperature: 0.7, max_tokens: 200 }
    }
}

/// Scored candidates of one best-of-N step, in generation order after
/// filtering, and the index of the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOfN {
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
    pub chosen: usize,
}

impl BestOfN {
    pub fn winner(&self) -> &str {
        &self.candidates[self.chosen]
    }
}

fn request(cfg: &AugmentConfig, prompt: String, n: usize, task: GenTask, target: &str) -> GenRequest {
    GenRequest::new(prompt, n)
        .with_settings(cfg.temperature, cfg.max_tokens)
        .with_hints(GenHints { task, target: Some(target.to_string()), options: Vec::new() })
}

/// Distinct non-refused texts, first occurrence kept.
fn texts(cands: Vec<Candidate>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    cands
        .into_iter()
        .filter_map(|c| match c {
            Candidate::Text(t) => Some(t),
            Candidate::Refused(_) => None,
        })
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// `cos(emb x, emb y) + p_ent(x => y)`.
pub fn preservation_score(x: &str, y: &str, backends: &BackendSet) -> Result<f64, PipelineError> {
    let ex = backends.embed(x)?;
    let ey = backends.embed(y)?;
    Ok(cosine(&ex, &ey) + backends.nli_score(x, y)?.p_ent)
}

fn best_of(x: &str, candidates: Vec<String>, variants: &[String], backends: &BackendSet, what: &str) -> Result<BestOfN, PipelineError> {
    let scores = variants
        .par_iter()
        .map(|y| preservation_score(x, y, backends))
        .collect::<Result<Vec<_>, _>>()?;
    let chosen = argmax_first(&scores).ok_or_else(|| PipelineError::NoValidCandidate(what.to_string()))?;
    Ok(BestOfN { candidates, scores, chosen })
}

/// Group-vague variant: the subgroup label in E and D is replaced by the
/// best coded reference. Premise, locus, maxim, standpoint and the stored
/// chain are carried over unchanged.
pub fn group_vague(
    instance: &AmtInstance,
    backends: &BackendSet,
    prompts: &PromptSet,
    cfg: &AugmentConfig,
) -> Result<(AmtInstance, BestOfN), PipelineError> {
    let label = &instance.target_group.level2;
    let x = instance.surface_text();
    let prompt = prompts.render(prompts::CODED_REFERENCE, &[("target", label), ("text", &x)])?;
    let req = request(cfg, prompt, cfg.n_candidates, GenTask::CodedReference, label);
    let mut seen = BTreeSet::new();
    let coded: Vec<String> = texts(backends.generate(&req)?)
        .iter()
        .filter_map(|t| parse_single_answer(t).ok())
        .filter(|c| !contains_ci(c, label) && !c.contains(DEFAULT_PLACEHOLDER))
        .filter(|c| seen.insert(c.to_lowercase()))
        .collect();
    let rewrite = |c: &str| (replace_ci(&instance.endoxon, label, c), replace_ci(&instance.datum, label, c));
    let variants: Vec<String> = coded
        .iter()
        .map(|c| {
            let (e, d) = rewrite(c);
            join_sentences(&e, &d)
        })
        .collect();
    let pick = best_of(&x, coded, &variants, backends, &format!("group_vague for `{label}`"))?;
    let (endoxon, datum) = rewrite(pick.winner());
    let variant = AmtInstance { endoxon, datum, ..instance.clone() };
    Ok((variant, pick))
}

/// Hostility-vague post: the best rewrite of E and D that never names the
/// subgroup.
pub fn hostility_vague(
    instance: &AmtInstance,
    backends: &BackendSet,
    prompts: &PromptSet,
    cfg: &AugmentConfig,
) -> Result<(NaturalPost, BestOfN), PipelineError> {
    let label = &instance.target_group.level2;
    let x = instance.surface_text();
    let prompt = prompts.render(
        prompts::HOSTILITY_POST,
        &[("endoxon", &instance.endoxon), ("datum", &instance.datum), ("target", label)],
    )?;
    let req = request(cfg, prompt, cfg.n_candidates, GenTask::HostilityPost, label);
    let posts: Vec<String> = texts(backends.generate(&req)?)
        .into_iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty() && !contains_ci(t, label) && !t.contains(DEFAULT_PLACEHOLDER))
        .collect();
    let pick = best_of(&x, posts.clone(), &posts, backends, &format!("hostility_vague for `{label}`"))?;
    Ok((NaturalPost { text: pick.winner().to_string() }, pick))
}

/// Non-hostile counterpart of a standpoint: among candidates whose NLI
/// label against the standpoint is not contradiction, the one with the
/// highest contradiction probability.
pub fn counter_standpoint(
    standpoint: &str,
    tg: &TargetGroupRef,
    backends: &BackendSet,
    prompts: &PromptSet,
    cfg: &AugmentConfig,
) -> Result<String, PipelineError> {
    let prompt = prompts.render(prompts::COUNTER_STANDPOINT, &[("standpoint", standpoint)])?;
    let req = request(cfg, prompt, cfg.n_candidates, GenTask::CounterStandpoint, &tg.level2);
    let cands: Vec<String> = texts(backends.generate(&req)?)
        .into_iter()
        .filter_map(|t| parse_single_answer(&t).ok().map(|_| t.trim().to_string()))
        .collect();
    let nli = cands
        .par_iter()
        .map(|c| backends.nli_score(standpoint, c))
        .collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = nli
        .iter()
        .map(|s| if s.label() == NliLabel::Contradiction { f64::NAN } else { s.p_contr })
        .collect();
    let i = argmax_first(&scores).ok_or_else(|| PipelineError::NoValidCandidate(format!("counter_standpoint for `{standpoint}`")))?;
    Ok(cands[i].clone())
}

/// Augments selected instances into tier families.
pub struct Augmenter<'a> {
    pub backends: &'a BackendSet,
    pub prompts: &'a PromptSet,
    pub cfg: &'a AugmentConfig,
}

impl<'a> Augmenter<'a> {
    pub fn new(backends: &'a BackendSet, prompts: &'a PromptSet, cfg: &'a AugmentConfig) -> Self {
        Self { backends, prompts, cfg }
    }

    pub fn family(&self, base: &AmtInstance, hard_seed: &str) -> Result<TierFamily, PipelineError> {
        let (gv, pick) = group_vague(base, self.backends, self.prompts, self.cfg)?;
        let (hv, _) = hostility_vague(base, self.backends, self.prompts, self.cfg)?;
        Ok(TierFamily {
            family_id: family_id(&base.standpoint, &base.target_group.level2),
            hard_seed: hard_seed.to_string(),
            base: base.clone(),
            group_vague: gv,
            coded_reference: pick.winner().to_string(),
            hostility_vague: hv,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::MockBackend;
    use crate::backends::NliScores;
    use crate::domain::{LocusId, SeedRef};

    fn base() -> AmtInstance {
        AmtInstance {
            endoxon: "Communities thrive on shared norms.".into(),
            datum: "Women ignore those norms.".into(),
            premise: "Women weaken communities.".into(),
            locus: LocusId { name: "Cause to effect".into(), scheme_description: "x".into() },
            maxim: "What weakens a community should be limited.".into(),
            standpoint: "Women should be restricted.".into(),
            target_group: TargetGroupRef::new("Gender", "Women"),
            chain_score: 0.5,
            provenance: SeedRef::new("s", "seed"),
            edges: Vec::new(),
        }
    }

    fn nli(p_ent: f64, p_contr: f64) -> NliScores {
        NliScores { p_ent, p_neu: 1.0 - p_ent - p_contr, p_contr }
    }

    #[test]
    fn group_vague_excludes_literal_and_preserves_chain() {
        let set = MockBackend::seeded(4)
            .with_rule(Some(GenTask::CodedReference), "", vec!["women folk".into(), "those ladies".into(), "that crowd".into()])
            .into_backend_set();
        let cfg = AugmentConfig { n_candidates: 3, ..Default::default() };
        let b = base();
        let (v, pick) = group_vague(&b, &set, &PromptSet::default(), &cfg).unwrap();
        assert_eq!(pick.candidates, ["those ladies", "that crowd"]);
        assert_eq!((&v.premise, &v.locus, &v.maxim, &v.standpoint), (&b.premise, &b.locus, &b.maxim, &b.standpoint));
        assert!(!contains_ci(&v.datum, "women"));
        assert!(v.datum.contains(pick.winner()));
    }

    #[test]
    fn group_vague_picks_first_max() {
        let b = base();
        let x = b.surface_text();
        let mut mock = MockBackend::seeded(4)
            .with_rule(Some(GenTask::CodedReference), "", vec!["c1".into(), "c2".into(), "c3".into()]);
        let unit = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        mock = mock.with_embedding(&x, vec![1.0, 0.0]);
        for (c, cos, pe) in [("c1", 0.9, 0.8), ("c2", 0.95, 0.6), ("c3", 0.7, 0.9)] {
            let y = join_sentences(&b.endoxon, &b.datum.replace("Women", c));
            mock = mock.with_embedding(&y, unit(cos)).with_nli(&x, &y, nli(pe, 0.0));
        }
        let set = mock.into_backend_set();
        let cfg = AugmentConfig { n_candidates: 3, ..Default::default() };
        let (_, pick) = group_vague(&b, &set, &PromptSet::default(), &cfg).unwrap();
        assert_eq!(pick.winner(), "c1");
        assert!((pick.scores[0] - 1.7).abs() < 1e-9);
    }

    #[test]
    fn hostility_vague_constraint_and_empty_set() {
        let set = MockBackend::seeded(4)
            .with_rule(Some(GenTask::HostilityPost), "", vec!["Women again?".into(), "Funny how some people never learn.".into()])
            .into_backend_set();
        let cfg = AugmentConfig { n_candidates: 2, ..Default::default() };
        let (post, pick) = hostility_vague(&base(), &set, &PromptSet::default(), &cfg).unwrap();
        assert_eq!(pick.candidates.len(), 1);
        assert_eq!(post.text, "Funny how some people never learn.");

        let set = MockBackend::seeded(4)
            .with_rule(Some(GenTask::HostilityPost), "", vec!["WOMEN!".into()])
            .into_backend_set();
        let cfg = AugmentConfig { n_candidates: 1, ..Default::default() };
        assert!(matches!(
            hostility_vague(&base(), &set, &PromptSet::default(), &cfg),
            Err(PipelineError::NoValidCandidate(_))
        ));
    }

    #[test]
    fn counter_drops_contradiction_and_takes_max_p_contr() {
        let s = "Women should be restricted.";
        let outs = ["a.", "b.", "c.", "d."];
        let mut mock = MockBackend::seeded(4)
            .with_rule(Some(GenTask::CounterStandpoint), "", outs.iter().map(|o| o.to_string()).collect());
        for (o, pc) in outs.iter().zip([0.1, 0.45, 0.3]) {
            mock = mock.with_nli(s, o, nli(0.5, pc));
        }
        mock = mock.with_nli(s, "d.", nli(0.1, 0.8));
        let set = mock.into_backend_set();
        let cfg = AugmentConfig { n_candidates: 4, ..Default::default() };
        let tg = TargetGroupRef::new("Gender", "Women");
        assert_eq!(counter_standpoint(s, &tg, &set, &PromptSet::default(), &cfg).unwrap(), "b.");
    }

    #[test]
    fn counter_all_contradiction_fails() {
        let s = "Women should be restricted.";
        let set = MockBackend::seeded(4)
            .with_rule(Some(GenTask::CounterStandpoint), "", vec!["x.".into()])
            .with_nli(s, "x.", nli(0.0, 0.9))
            .into_backend_set();
        let cfg = AugmentConfig { n_candidates: 1, ..Default::default() };
        let tg = TargetGroupRef::new("Gender", "Women");
        assert!(counter_standpoint(s, &tg, &set, &PromptSet::default(), &cfg).is_err());
    }

    #[test]
    fn family_from_mock_defaults() {
        let set = MockBackend::seeded(9).into_backend_set();
        let prompts = PromptSet::default();
        let cfg = AugmentConfig::default();
        let fam = Augmenter::new(&set, &prompts, &cfg).family(&base(), "hard seed").unwrap();
        assert!(!contains_ci(&fam.hostility_vague.text, "women"));
        assert_eq!(fam.family_id, family_id("Women should be restricted.", "Women"));
    }
}
