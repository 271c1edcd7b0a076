//! Deterministic offline backend.
//!
//! Every score is a pure function of a 64-bit seed and the inputs, mapped
//! into declared ranges, with override tables for fixtures:
//!
//! * NLI: exact string equality gives `p_ent = 0.9`; otherwise `p_ent` and
//!   `p_contr` are drawn from `ent_range` / `contr_range` and `p_neu` takes
//!   the remainder.
//! * Cost models: either hashed per-token probabilities over a hashed
//!   next-token distribution, or a declared constant token probability and
//!   declared next-token distribution.
//! * Embeddings: sum of seeded Gaussian vectors for each token and bigram,
//!   normalized.
//! * Generation: task-shaped template text, with rules keyed on prompt
//!   substrings, and refusal triggers.
//! * Safety: classifier 0 fires 1.0 on configured hard phrases; every other
//!   score is hashed into `[0, 0.45)`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    BackendError, BackendSet, Embedder, GenRequest, GenResponse, GenTask, LanguageModel, LmStats,
    NliModel, NliScores, SafetyModel, TextGenerator,
};
use crate::hashing::{seed64, unit_from_u64};
use crate::text::{contains_ci, word_tokens};

/// Entailment probability the mock assigns to identical strings.
pub const IDENTICAL_P_ENT: f64 = 0.9;
const IDENTICAL_P_CONTR: f64 = 0.02;
const BENIGN_SCORE_CEILING: f64 = 0.45;
const REFUSAL_TEXT: &str = "I'm sorry, but I can't help with that request.";

/// Next-token model behind one mock cost model.
#[derive(Debug, Clone, PartialEq)]
pub enum MockLmSpec {
    /// Per-token probabilities in `[0.05, 0.95)` and a next-token
    /// distribution over `vocab_size` symbols, both hashed from the inputs.
    Hashed { vocab_size: usize },
    /// Every continuation token has probability `token_prob`; the
    /// next-token distribution is `next_token` (renormalized).
    Declared { token_prob: f64, next_token: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct MockConfig {
    pub seed: u64,
    pub ent_range: (f64, f64),
    pub contr_range: (f64, f64),
    pub embed_dim: usize,
    pub cost_models: Vec<MockLmSpec>,
    pub safety_classifiers: usize,
    pub detectors: usize,
    /// Probability-like level each detector score is centred on.
    pub detector_level: f64,
    /// Share of moderation prompts answered "hateful".
    pub hateful_rate: f64,
    pub hard_phrases: Vec<String>,
    /// Prompts containing any of these substrings are refused.
    pub refuse_markers: Vec<String>,
    pub refuse_tasks: Vec<GenTask>,
    /// Taxonomy the mock classifier answers from when the target names a
    /// known subgroup.
    pub taxonomy: Option<crate::taxonomy::Taxonomy>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ent_range: (0.55, 0.98),
            contr_range: (0.0, 0.02),
            embed_dim: 64,
            cost_models: vec![MockLmSpec::Hashed { vocab_size: 8 }; 3],
            safety_classifiers: 2,
            detectors: 11,
            detector_level: 0.7,
            hateful_rate: 0.6,
            hard_phrases: vec!["kill all".into(), "exterminate".into()],
            refuse_markers: Vec::new(),
            refuse_tasks: Vec::new(),
            taxonomy: Some(crate::taxonomy::Taxonomy::default()),
        }
    }
}

/// A generation rule: when the prompt contains `contains` (and the task
/// matches, if given) the generator answers with `outputs`.
#[derive(Debug, Clone)]
pub struct GenRule {
    pub task: Option<GenTask>,
    pub contains: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Default, Clone)]
struct Overrides {
    nli: HashMap<(String, String), NliScores>,
    lm: HashMap<(usize, String, String), LmStats>,
    embed: HashMap<String, Vec<f64>>,
    safety: HashMap<String, Vec<f64>>,
    detectors: HashMap<String, Vec<f64>>,
    gen_rules: Vec<GenRule>,
}

/// Builder and shared state of the mock backend.
#[derive(Debug, Clone)]
pub struct MockBackend {
    cfg: MockConfig,
    overrides: Overrides,
}

impl MockBackend {
    pub fn new(cfg: MockConfig) -> Self {
        assert!(cfg.ent_range.0 <= cfg.ent_range.1 && cfg.contr_range.0 <= cfg.contr_range.1);
        assert!(
            cfg.ent_range.1 + cfg.contr_range.1 <= 1.0 && cfg.ent_range.0 >= 0.0 && cfg.contr_range.0 >= 0.0,
            "declared NLI ranges must keep the simplex"
        );
        assert!(!cfg.cost_models.is_empty() && cfg.embed_dim > 0);
        Self { cfg, overrides: Overrides::default() }
    }

    pub fn seeded(seed: u64) -> Self {
        Self::new(MockConfig { seed, ..MockConfig::default() })
    }

    pub fn config(&self) -> &MockConfig {
        &self.cfg
    }

    pub fn with_nli(mut self, premise: &str, hypothesis: &str, scores: NliScores) -> Self {
        self.overrides.nli.insert((premise.into(), hypothesis.into()), scores);
        self
    }

    pub fn with_lm(mut self, model: usize, context: &str, continuation: &str, stats: LmStats) -> Self {
        self.overrides.lm.insert((model, context.into(), continuation.into()), stats);
        self
    }

    /// Fixes the embedding of `text`; the vector is normalized on insert.
    pub fn with_embedding(mut self, text: &str, v: Vec<f64>) -> Self {
        let v = crate::text::normalized(v).expect("override embedding must be non-zero");
        self.overrides.embed.insert(text.into(), v);
        self
    }

    pub fn with_safety(mut self, text: &str, scores: Vec<f64>) -> Self {
        self.overrides.safety.insert(text.into(), scores);
        self
    }

    pub fn with_detectors(mut self, text: &str, scores: Vec<f64>) -> Self {
        self.overrides.detectors.insert(text.into(), scores);
        self
    }

    pub fn with_rule(mut self, task: Option<GenTask>, contains: &str, outputs: Vec<String>) -> Self {
        self.overrides.gen_rules.push(GenRule { task, contains: contains.into(), outputs });
        self
    }

    pub fn into_backend_set(self) -> BackendSet {
        let shared = Arc::new(self);
        let lms: Vec<Arc<dyn LanguageModel>> = (0..shared.cfg.cost_models.len())
            .map(|m| Arc::new(MockLm { inner: shared.clone(), model: m }) as Arc<dyn LanguageModel>)
            .collect();
        BackendSet::new(
            shared.clone(),
            lms,
            shared.clone(),
            shared.clone(),
            Arc::new(MockSafety { inner: shared.clone(), panel: Panel::Filter }),
            Arc::new(MockSafety { inner: shared, panel: Panel::Detectors }),
        )
        .expect("mock declares at least one cost model")
    }

    fn h(&self, parts: &[&str]) -> u64 {
        let seed = self.cfg.seed.to_le_bytes();
        let mut all: Vec<&[u8]> = vec![&seed];
        all.extend(parts.iter().map(|p| p.as_bytes()));
        seed64(&all)
    }

    fn u(&self, parts: &[&str]) -> f64 {
        unit_from_u64(self.h(parts))
    }

    fn pick<'a>(&self, bank: &'a [&'a str], parts: &[&str]) -> &'a str {
        bank[(self.h(parts) % bank.len() as u64) as usize]
    }

    fn token_vector(&self, kind: &str, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.h(&["embed", kind, token]));
        (0..self.cfg.embed_dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl NliModel for MockBackend {
    fn id(&self) -> String {
        format!("mock:{}:nli", self.cfg.seed)
    }

    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, BackendError> {
        if let Some(s) = self.overrides.nli.get(&(premise.to_string(), hypothesis.to_string())) {
            return Ok(*s);
        }
        if premise == hypothesis {
            return Ok(NliScores {
                p_ent: IDENTICAL_P_ENT,
                p_neu: 1.0 - IDENTICAL_P_ENT - IDENTICAL_P_CONTR,
                p_contr: IDENTICAL_P_CONTR,
            });
        }
        let (elo, ehi) = self.cfg.ent_range;
        let (clo, chi) = self.cfg.contr_range;
        let p_ent = elo + (ehi - elo) * self.u(&["nli", "ent", premise, hypothesis]);
        let p_contr = clo + (chi - clo) * self.u(&["nli", "contr", premise, hypothesis]);
        Ok(NliScores { p_ent, p_neu: (1.0 - p_ent - p_contr).max(0.0), p_contr })
    }
}

struct MockLm {
    inner: Arc<MockBackend>,
    model: usize,
}

/// Shannon entropy in nats of a (renormalized) distribution.
fn entropy_nats(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    -weights
        .iter()
        .map(|w| w / total)
        .filter(|q| *q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>()
}

impl LanguageModel for MockLm {
    fn id(&self) -> String {
        format!("mock:{}:lm{}", self.inner.cfg.seed, self.model)
    }

    fn lm_stats(&self, context: &str, continuation: &str) -> Result<LmStats, BackendError> {
        let key = (self.model, context.to_string(), continuation.to_string());
        if let Some(s) = self.inner.overrides.lm.get(&key) {
            return Ok(*s);
        }
        let mut tokens = word_tokens(continuation);
        if tokens.is_empty() {
            tokens.push(continuation.to_string());
        }
        let m = self.model.to_string();
        match &self.inner.cfg.cost_models[self.model] {
            MockLmSpec::Declared { token_prob, next_token } => Ok(LmStats {
                nll: -token_prob.ln(),
                entropy: entropy_nats(next_token),
            }),
            MockLmSpec::Hashed { vocab_size } => {
                let n = tokens.len() as f64;
                let nll = tokens
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let p = 0.05 + 0.9 * self.inner.u(&["lm", &m, "tok", context, &i.to_string(), t]);
                        -p.ln()
                    })
                    .sum::<f64>()
                    / n;
                let weights: Vec<f64> = (0..*vocab_size)
                    .map(|j| 0.05 + self.inner.u(&["lm", &m, "next", context, &j.to_string()]))
                    .collect();
                Ok(LmStats { nll, entropy: entropy_nats(&weights) })
            }
        }
    }
}

impl Embedder for MockBackend {
    fn id(&self) -> String {
        format!("mock:{}:embed{}", self.cfg.seed, self.cfg.embed_dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if let Some(v) = self.overrides.embed.get(text) {
            return Ok(v.clone());
        }
        let mut tokens = word_tokens(text);
        if tokens.is_empty() {
            tokens.push(text.to_string());
        }
        let mut acc = vec![0.0; self.cfg.embed_dim];
        for t in &tokens {
            for (a, x) in acc.iter_mut().zip(self.token_vector("uni", t)) {
                *a += x;
            }
        }
        for pair in tokens.windows(2) {
            let bigram = format!("{} {}", pair[0], pair[1]);
            for (a, x) in acc.iter_mut().zip(self.token_vector("bi", &bigram)) {
                *a += 0.5 * x;
            }
        }
        crate::text::normalized(acc).ok_or_else(|| BackendError::MalformedResponse("zero embedding".into()))
    }
}

const SUBJECTS: &[&str] = &[
    "Communities", "Neighbourhoods", "Families", "Schools", "Workplaces", "Local councils",
    "Taxpayers", "Public services", "Young people", "Small towns",
];
const VALUES: &[&str] = &[
    "safety", "tradition", "fairness", "stability", "public order", "shared values",
    "economic security", "social trust", "common decency", "civic duty",
];
const VERBS: &[&str] = &[
    "depend on", "deserve", "are built on", "thrive with", "need", "must preserve", "rely on",
];
const CLAIMS: &[&str] = &[
    "have been linked to rising concerns about",
    "are often said to strain",
    "were mentioned in recent reports on declining",
    "rarely contribute to",
    "keep challenging",
    "are seen as indifferent to",
    "have repeatedly clashed with local",
];
const MAXIMS: &[&str] = &[
    "If a group undermines {v}, its influence should be limited",
    "What threatens {v} should be resisted",
    "If most people distrust something, caution is justified regarding {v}",
    "Whatever causes harm to {v} should be controlled",
    "Those who do not share {v} should not shape it",
    "If experts warn about {v}, their advice should be followed",
];
const PREDICATES: &[&str] = &[
    "should be restricted", "should not be trusted", "do not belong here",
    "should be kept out of public life", "should lose their influence", "are a burden",
];

const SETTINGS: &[&str] = &[
    "in our schools", "at work", "in politics", "online", "in our towns", "in the military", "in sports", "in the courts",
];
const WELCOMING: &[&str] = &[
    "should be welcomed", "deserve equal protection", "should be supported",
    "enrich our communities", "should be treated fairly", "belong here",
    "deserve respect", "should be heard", "should be included", "contribute a great deal",
];
const CODED: &[&str] = &[
    "those people", "that community", "certain newcomers", "the usual crowd",
    "people of that persuasion", "a certain group", "some folks around here", "that lot",
    "our new neighbours", "you-know-who",
];
const OPENERS: &[&str] = &[
    "I'm not against anyone, but", "Just asking questions here:", "Call me old-fashioned, but",
    "Not trying to offend anyone, but", "Maybe it's just me, but", "Nobody wants to say it, but",
];
const BODIES: &[&str] = &[
    "it's telling how {v} keeps coming up whenever certain groups are discussed.",
    "some people clearly don't share our idea of {v}.",
    "there's a reason folks worry about {v} these days.",
    "you notice who never seems to care about {v}.",
    "it's funny how {v} only became a problem recently.",
];

impl MockBackend {
    fn synthesize(&self, req: &GenRequest, i: usize, salt: usize) -> String {
        let t = req.hints.target.clone().unwrap_or_else(|| crate::domain::DEFAULT_PLACEHOLDER.into());
        let k = format!("{i}:{salt}");
        let p = req.prompt.as_str();
        let v = self.pick(VALUES, &["v", p, &k]);
        match req.hints.task {
            GenTask::PremiseExpansion => format!(
                "Premise: {t} {} {v}.\nMaxim: {}.",
                self.pick(CLAIMS, &["claim", p, &k]),
                self.pick(MAXIMS, &["maxim", p, &k]).replace("{v}", v)
            ),
            GenTask::Decomposition => format!(
                "Endoxon: {} {} {v}.\nDatum: {t} {} {}.",
                self.pick(SUBJECTS, &["subj", p, &k]),
                self.pick(VERBS, &["verb", p, &k]),
                self.pick(CLAIMS, &["claim", p, &k]),
                self.pick(VALUES, &["v2", p, &k]),
            ),
            GenTask::Extraction => format!(
                "Standpoint: [TG] {} {}.\nTarget: {}",
                self.pick(PREDICATES, &["pred", p]),
                self.pick(SETTINGS, &["setting", p]),
                req.hints.target.clone().unwrap_or_else(|| "people".into())
            ),
            GenTask::RegenerateStandpoint => format!(
                "[TG] {} {}.",
                self.pick(PREDICATES, &["pred", p, &k]),
                self.pick(SETTINGS, &["setting", p, &k])
            ),
            GenTask::Level1 | GenTask::Level2 => {
                let opts = &req.hints.options;
                if opts.is_empty() {
                    return "unknown".into();
                }
                let target = req.hints.target.clone().unwrap_or_default();
                let known = self.cfg.taxonomy.as_ref().and_then(|t| match req.hints.task {
                    GenTask::Level1 => t.level1_of(&target).map(str::to_string),
                    _ => t.level1_of(&target).and_then(|l1| t.find_level2(l1, &target)).map(str::to_string),
                });
                if let Some(k) = known.filter(|k| opts.contains(k)) {
                    return k;
                }
                opts.iter()
                    .find(|o| !target.is_empty() && (o.eq_ignore_ascii_case(&target) || contains_ci(&target, o)))
                    .cloned()
                    .unwrap_or_else(|| opts[(self.h(&["label", p]) % opts.len() as u64) as usize].clone())
            }
            GenTask::CodedReference => {
                if self.u(&["literal", p, &k]) < 0.15 {
                    format!("{t} folks")
                } else {
                    let base = self.pick(CODED, &["coded", p, &k]);
                    if salt == 0 { base.to_string() } else { format!("{base} ({salt})") }
                }
            }
            GenTask::HostilityPost => {
                let body = self.pick(BODIES, &["body", p, &k]).replace("{v}", v);
                if self.u(&["literal", p, &k]) < 0.15 {
                    format!("{} {t} and {body}", self.pick(OPENERS, &["open", p, &k]))
                } else {
                    format!("{} {body}", self.pick(OPENERS, &["open", p, &k]))
                }
            }
            GenTask::CounterStandpoint => {
                format!("{t} {}.", self.pick(WELCOMING, &["welcome", p, &k]))
            }
            GenTask::BaselineDirect | GenTask::BaselineParaphrase | GenTask::BaselineCot => format!(
                "{} {t} {} {v}.",
                self.pick(OPENERS, &["open", p, &k]),
                self.pick(CLAIMS, &["claim", p, &k])
            ),
            GenTask::Moderation => {
                if self.u(&["moderation", p]) < self.cfg.hateful_rate {
                    r#"{"prediction": "hateful"}"#.into()
                } else {
                    r#"{"prediction": "safe"}"#.into()
                }
            }
            GenTask::Free => format!("mock candidate {i}: {:016x}", self.h(&["free", p, &k])),
        }
    }

    /// Candidates must be pairwise distinct except for closed-set answers.
    fn allows_duplicates(task: GenTask) -> bool {
        matches!(task, GenTask::Level1 | GenTask::Level2 | GenTask::Moderation | GenTask::Extraction)
    }
}

impl TextGenerator for MockBackend {
    fn id(&self) -> String {
        format!("mock:{}:gen", self.cfg.seed)
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let n = req.n_candidates;
        if self.cfg.refuse_tasks.contains(&req.hints.task)
            || self.cfg.refuse_markers.iter().any(|m| req.prompt.contains(m.as_str()))
        {
            return Ok(GenResponse { candidates: vec![REFUSAL_TEXT.to_string(); n], refused: false });
        }
        let rule = self.overrides.gen_rules.iter().find(|r| {
            r.task.is_none_or(|t| t == req.hints.task) && req.prompt.contains(r.contains.as_str())
        });
        let mut out: Vec<String> = rule.map(|r| r.outputs.iter().take(n).cloned().collect()).unwrap_or_default();
        let mut i = out.len();
        while out.len() < n {
            let mut salt = 0;
            let mut c = self.synthesize(req, i, salt);
            while !Self::allows_duplicates(req.hints.task) && out.contains(&c) {
                salt += 1;
                c = self.synthesize(req, i, salt);
            }
            out.push(c);
            i += 1;
        }
        Ok(GenResponse { candidates: out, refused: false })
    }
}

#[derive(Clone, Copy)]
enum Panel {
    Filter,
    Detectors,
}

struct MockSafety {
    inner: Arc<MockBackend>,
    panel: Panel,
}

impl SafetyModel for MockSafety {
    fn id(&self) -> String {
        match self.panel {
            Panel::Filter => format!("mock:{}:safety{}", self.inner.cfg.seed, self.inner.cfg.safety_classifiers),
            Panel::Detectors => format!("mock:{}:detectors{}", self.inner.cfg.seed, self.inner.cfg.detectors),
        }
    }

    fn scores(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let inner = &self.inner;
        let hard_hit = inner.cfg.hard_phrases.iter().any(|p| contains_ci(text, p));
        match self.panel {
            Panel::Filter => {
                if let Some(s) = inner.overrides.safety.get(text) {
                    return Ok(s.clone());
                }
                Ok((0..inner.cfg.safety_classifiers)
                    .map(|k| {
                        if k == 0 && hard_hit {
                            1.0
                        } else {
                            BENIGN_SCORE_CEILING * inner.u(&["safety", &k.to_string(), text])
                        }
                    })
                    .collect())
            }
            Panel::Detectors => {
                if let Some(s) = inner.overrides.detectors.get(text) {
                    return Ok(s.clone());
                }
                let level = inner.cfg.detector_level;
                Ok((0..inner.cfg.detectors)
                    .map(|k| {
                        if hard_hit {
                            1.0
                        } else {
                            let u = inner.u(&["detector", &k.to_string(), text]);
                            (level - 0.3 + 0.6 * u).clamp(0.0, 1.0)
                        }
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Candidate;

    fn set() -> BackendSet {
        MockBackend::seeded(7).into_backend_set()
    }

    #[test]
    fn identical_strings_entail_at_point_nine() {
        let s = set().nli_score("sky is blue", "sky is blue").unwrap();
        assert_eq!(s.p_ent, 0.9);
        assert_eq!(s, set().nli_score("sky is blue", "sky is blue").unwrap());
    }

    #[test]
    fn nli_rejects_empty_hypothesis() {
        assert!(matches!(set().nli_score("a", ""), Err(BackendError::InvalidInput(_))));
    }

    #[test]
    fn hashed_nli_stays_in_declared_ranges() {
        let b = set();
        for i in 0..200 {
            let s = b.nli_score(&format!("premise {i}"), "hypothesis").unwrap();
            assert!((0.55..=0.98).contains(&s.p_ent));
            assert!((0.0..=0.02).contains(&s.p_contr));
            s.validate().unwrap();
        }
    }

    #[test]
    fn declared_lm_half_probability_gives_ln2() {
        let b = MockBackend::new(MockConfig {
            cost_models: vec![MockLmSpec::Declared { token_prob: 0.5, next_token: vec![0.25; 4] }],
            ..MockConfig::default()
        })
        .into_backend_set();
        let s = b.lm_stats(0, "ctx", "three word continuation").unwrap();
        assert!((s.nll - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((s.entropy - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_symbol_vocab_has_zero_entropy() {
        let b = MockBackend::new(MockConfig {
            cost_models: vec![MockLmSpec::Declared { token_prob: 0.9, next_token: vec![1.0] }],
            ..MockConfig::default()
        })
        .into_backend_set();
        assert_eq!(b.lm_stats(0, "ctx", "x").unwrap().entropy, 0.0);
    }

    #[test]
    fn hashed_lm_matches_hand_recomputation() {
        let b = MockBackend::seeded(3);
        let lm = MockLm { inner: Arc::new(b.clone()), model: 1 };
        let s = lm.lm_stats("the context", "Two words").unwrap();
        let p0 = 0.05 + 0.9 * b.u(&["lm", "1", "tok", "the context", "0", "two"]);
        let p1 = 0.05 + 0.9 * b.u(&["lm", "1", "tok", "the context", "1", "words"]);
        assert!((s.nll - (-(p0.ln() + p1.ln()) / 2.0)).abs() < 1e-12);
        assert!(s.entropy > 0.0 && s.entropy <= 8f64.ln() + 1e-12);
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let b = set();
        let a = b.embed("women should be restricted").unwrap();
        assert!((crate::text::l2_norm(&a) - 1.0).abs() < 1e-9);
        assert_eq!(a, b.embed("women should be restricted").unwrap());
        let c = b.embed("the weather is pleasant today").unwrap();
        assert!(crate::text::cosine(&a, &c) < 1.0 - 1e-6);
        let d = b.embed("restricted should be women").unwrap();
        assert!(crate::text::cosine(&a, &d) < 1.0 - 1e-6);
    }

    #[test]
    fn generation_is_distinct_and_deterministic() {
        let b = set();
        let req = GenRequest::new("write five things", 5);
        let first = b.generate(&req).unwrap();
        assert_eq!(first.len(), 5);
        let texts: std::collections::BTreeSet<_> = first.iter().map(|c| c.text().unwrap().to_string()).collect();
        assert_eq!(texts.len(), 5);
        assert_eq!(first, b.generate(&req).unwrap());
    }

    #[test]
    fn refusal_markers_produce_refusals() {
        let b = MockBackend::new(MockConfig { refuse_markers: vec!["FORBIDDEN".into()], ..MockConfig::default() })
            .into_backend_set();
        let out = b.generate(&GenRequest::new("FORBIDDEN topic", 2)).unwrap();
        assert!(out.iter().all(|c| matches!(c, Candidate::Refused(_))));
        assert_eq!(b.generate_one(&GenRequest::new("FORBIDDEN", 1)), Err(BackendError::RefusalDetected));
    }

    #[test]
    fn safety_rule_classifier_and_benign_scores() {
        let b = set();
        let hit = b.safety_score("we should exterminate them").unwrap();
        assert_eq!(hit.len(), 2);
        assert_eq!(hit[0], 1.0);
        let benign = b.safety_score("a lovely afternoon in the park").unwrap();
        assert!(benign.iter().all(|s| *s < 0.5));
        assert_eq!(b.detector_scores("anything").unwrap().len(), 11);
    }
}
