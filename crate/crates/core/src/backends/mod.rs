//! Model capabilities behind narrow traits: NLI, language-model statistics,
//! sentence embeddings, text generation and safety classification.
//!
//! [`BackendSet`] bundles one implementation of each and enforces the
//! response contracts (probability simplex, unit-norm embeddings, exact
//! candidate counts, refusal classification) no matter which implementation
//! sits behind it. [`mock`] is a deterministic offline implementation,
//! [`remote`] speaks the HTTP+JSON sidecar protocol and [`cached`] memoizes
//! any of them on disk.

pub mod cached;
pub mod mock;
pub mod remote;

use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `p_ent + p_neu + p_contr = 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-3;
/// Tolerance on the unit norm of embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("generation refused")]
    RefusalDetected,
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliScores {
    pub p_ent: f64,
    pub p_neu: f64,
    pub p_contr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliScores {
    pub fn validate(&self) -> Result<(), BackendError> {
        for (name, p) in [("p_ent", self.p_ent), ("p_neu", self.p_neu), ("p_contr", self.p_contr)] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(BackendError::MalformedResponse(format!("{name}={p} outside [0,1]")));
            }
        }
        let sum = self.p_ent + self.p_neu + self.p_contr;
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(BackendError::MalformedResponse(format!("NLI probabilities sum to {sum}")));
        }
        Ok(())
    }

    /// Argmax class. Contradiction wins only when strictly largest;
    /// entailment beats neutral on ties.
    pub fn label(&self) -> NliLabel {
        if self.p_contr > self.p_ent && self.p_contr > self.p_neu {
            NliLabel::Contradiction
        } else if self.p_neu > self.p_ent {
            NliLabel::Neutral
        } else {
            NliLabel::Entailment
        }
    }
}

/// Per-token mean negative log-likelihood of a continuation and the entropy
/// of the next-token distribution after the context, both in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmStats {
    pub nll: f64,
    pub entropy: f64,
}

impl LmStats {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.nll.is_finite() || self.nll < 0.0 || !self.entropy.is_finite() || self.entropy < 0.0 {
            return Err(BackendError::MalformedResponse(format!(
                "lm stats must be finite and non-negative, got nll={} entropy={}",
                self.nll, self.entropy
            )));
        }
        Ok(())
    }
}

/// What a generation request is for. Offline backends use it to shape
/// their output; it is never sent over the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenTask {
    #[default]
    Free,
    PremiseExpansion,
    Decomposition,
    Extraction,
    RegenerateStandpoint,
    Level1,
    Level2,
    CodedReference,
    HostilityPost,
    CounterStandpoint,
    BaselineDirect,
    BaselineParaphrase,
    BaselineCot,
    Moderation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenHints {
    pub task: GenTask,
    /// Target label the prompt is about, when known.
    pub target: Option<String>,
    /// Closed label set for classification prompts.
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub n_candidates: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    #[serde(skip)]
    pub hints: GenHints,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: usize = 200;

impl GenRequest {
    pub fn new(prompt: impl Into<String>, n_candidates: usize) -> Self {
        Self {
            prompt: prompt.into(),
            n_candidates,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            hints: GenHints::default(),
        }
    }

    pub fn with_hints(mut self, hints: GenHints) -> Self {
        self.hints = hints;
        self
    }

    pub fn with_settings(mut self, temperature: f64, max_tokens: usize) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidInput("empty prompt".into()));
        }
        if self.n_candidates == 0 || self.max_tokens == 0 {
            return Err(BackendError::InvalidInput("n_candidates and max_tokens must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidInput(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub candidates: Vec<String>,
    #[serde(default)]
    pub refused: bool,
}

pub trait NliModel: Send + Sync {
    fn id(&self) -> String;
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, BackendError>;
}

pub trait LanguageModel: Send + Sync {
    fn id(&self) -> String;
    fn lm_stats(&self, context: &str, continuation: &str) -> Result<LmStats, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

pub trait TextGenerator: Send + Sync {
    fn id(&self) -> String;
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError>;
}

/// An ensemble of classifiers returning one score in `[0,1]` each.
pub trait SafetyModel: Send + Sync {
    fn id(&self) -> String;
    fn scores(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Pattern-based refusal detection over generated text.
#[derive(Debug, Clone)]
pub struct RefusalDetector {
    patterns: Vec<Regex>,
}

pub const DEFAULT_REFUSAL_PATTERNS: &[&str] = &[
    r"(?i)\bI(?:'m| am) sorry\b",
    r"(?i)\bI (?:can(?:no|')t|won't|will not) (?:help|assist|comply|provide|create|generate|write|produce)",
    r"(?i)\bI(?:'m| am) (?:unable|not able) to\b",
    r"(?i)\bas an AI\b",
    r"(?i)\bagainst (?:my|our) (?:guidelines|policies|policy)\b",
];

impl RefusalDetector {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, regex::Error> {
        let patterns = patterns.iter().map(|p| Regex::new(p.as_ref())).collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn is_refusal(&self, text: &str) -> bool {
        text.trim().is_empty() || self.patterns.iter().any(|p| p.is_match(text))
    }
}

impl Default for RefusalDetector {
    fn default() -> Self {
        Self::new(DEFAULT_REFUSAL_PATTERNS).expect("default refusal patterns compile")
    }
}

/// One generated candidate after refusal classification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "text", rename_all = "snake_case")]
pub enum Candidate {
    Text(String),
    Refused(String),
}

impl Candidate {
    pub fn text(&self) -> Option<&str> {
        match self {
            Candidate::Text(t) => Some(t),
            Candidate::Refused(_) => None,
        }
    }
}

/// The full set of capabilities a run uses. The number of cost models and
/// the embedding dimension are fixed for the lifetime of the set.
#[derive(Clone)]
pub struct BackendSet {
    pub nli: Arc<dyn NliModel>,
    pub lms: Vec<Arc<dyn LanguageModel>>,
    pub embedder: Arc<dyn Embedder>,
    pub generator: Arc<dyn TextGenerator>,
    /// Filter ensemble used for admissibility.
    pub safety: Arc<dyn SafetyModel>,
    /// Detector panel used for hard-hate label verification during curation.
    pub detectors: Arc<dyn SafetyModel>,
    pub refusal: RefusalDetector,
    embed_dim: Arc<OnceLock<usize>>,
}

impl std::fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendSet")
            .field("nli", &self.nli.id())
            .field("lms", &self.lms.iter().map(|m| m.id()).collect::<Vec<_>>())
            .field("embedder", &self.embedder.id())
            .field("generator", &self.generator.id())
            .finish_non_exhaustive()
    }
}

fn require_text(what: &str, text: &str) -> Result<(), BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::InvalidInput(format!("{what} must be non-empty")));
    }
    Ok(())
}

impl BackendSet {
    pub fn new(
        nli: Arc<dyn NliModel>,
        lms: Vec<Arc<dyn LanguageModel>>,
        embedder: Arc<dyn Embedder>,
        generator: Arc<dyn TextGenerator>,
        safety: Arc<dyn SafetyModel>,
        detectors: Arc<dyn SafetyModel>,
    ) -> Result<Self, BackendError> {
        if lms.is_empty() {
            return Err(BackendError::InvalidInput("at least one cost model is required".into()));
        }
        Ok(Self {
            nli,
            lms,
            embedder,
            generator,
            safety,
            detectors,
            refusal: RefusalDetector::default(),
            embed_dim: Arc::new(OnceLock::new()),
        })
    }

    pub fn with_refusal(mut self, refusal: RefusalDetector) -> Self {
        self.refusal = refusal;
        self
    }

    /// Number of cost models M.
    pub fn model_count(&self) -> usize {
        self.lms.len()
    }

    /// Stable identifier of the whole set.
    pub fn id(&self) -> String {
        let mut parts = vec![self.nli.id()];
        parts.extend(self.lms.iter().map(|m| m.id()));
        parts.extend([self.embedder.id(), self.generator.id(), self.safety.id(), self.detectors.id()]);
        parts.join("|")
    }

    pub fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliScores, BackendError> {
        require_text("premise", premise)?;
        require_text("hypothesis", hypothesis)?;
        let s = self.nli.nli(premise, hypothesis)?;
        s.validate()?;
        Ok(s)
    }

    pub fn lm_stats(&self, model: usize, context: &str, continuation: &str) -> Result<LmStats, BackendError> {
        require_text("continuation", continuation)?;
        let lm = self
            .lms
            .get(model)
            .ok_or_else(|| BackendError::InvalidInput(format!("no cost model #{model}")))?;
        let s = lm.lm_stats(context, continuation)?;
        s.validate()?;
        Ok(s)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        require_text("text", text)?;
        let v = self.embedder.embed(text)?;
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::MalformedResponse("embedding empty or non-finite".into()));
        }
        let dim = *self.embed_dim.get_or_init(|| v.len());
        if v.len() != dim {
            return Err(BackendError::MalformedResponse(format!(
                "embedding dimension {} differs from run dimension {dim}",
                v.len()
            )));
        }
        let norm = crate::text::l2_norm(&v);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return crate::text::normalized(v)
                .ok_or_else(|| BackendError::MalformedResponse("zero embedding".into()));
        }
        Ok(v)
    }

    /// Requests `n_candidates` texts and classifies each as text or refusal.
    pub fn generate(&self, req: &GenRequest) -> Result<Vec<Candidate>, BackendError> {
        req.validate()?;
        let resp = self.generator.generate(req)?;
        if resp.candidates.len() != req.n_candidates {
            return Err(BackendError::MalformedResponse(format!(
                "requested {} candidates, received {}",
                req.n_candidates,
                resp.candidates.len()
            )));
        }
        Ok(resp
            .candidates
            .into_iter()
            .map(|c| {
                if resp.refused || self.refusal.is_refusal(&c) {
                    Candidate::Refused(c)
                } else {
                    Candidate::Text(c)
                }
            })
            .collect())
    }

    /// Single-candidate generation; a refusal surfaces as
    /// [`BackendError::RefusalDetected`].
    pub fn generate_one(&self, req: &GenRequest) -> Result<String, BackendError> {
        let mut req = req.clone();
        req.n_candidates = 1;
        match self.generate(&req)?.pop() {
            Some(Candidate::Text(t)) => Ok(t),
            _ => Err(BackendError::RefusalDetected),
        }
    }

    pub fn safety_score(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        require_text("text", text)?;
        check_scores(self.safety.scores(text)?)
    }

    pub fn detector_scores(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        require_text("text", text)?;
        check_scores(self.detectors.scores(text)?)
    }
}

/// Non-empty, finite, each in `[0, 1]`.
pub fn check_scores(scores: Vec<f64>) -> Result<Vec<f64>, BackendError> {
    if scores.is_empty() {
        return Err(BackendError::MalformedResponse("no classifier scores".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite() || !(0.0..=1.0).contains(*s)) {
        return Err(BackendError::MalformedResponse(format!("classifier score {bad} outside [0,1]")));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_validation() {
        assert!(NliScores { p_ent: 0.5, p_neu: 0.3, p_contr: 0.2 }.validate().is_ok());
        assert!(NliScores { p_ent: 0.5, p_neu: 0.3, p_contr: 0.3 }.validate().is_err());
        assert!(NliScores { p_ent: 0.5, p_neu: 0.5004, p_contr: 0.0 }.validate().is_ok());
        assert!(NliScores { p_ent: -0.1, p_neu: 0.6, p_contr: 0.5 }.validate().is_err());
    }

    #[test]
    fn label_tie_breaks() {
        let s = NliScores { p_ent: 0.2, p_neu: 0.4, p_contr: 0.4 };
        assert_eq!(s.label(), NliLabel::Neutral);
        let s = NliScores { p_ent: 0.1, p_neu: 0.3, p_contr: 0.6 };
        assert_eq!(s.label(), NliLabel::Contradiction);
        let s = NliScores { p_ent: 0.4, p_neu: 0.4, p_contr: 0.2 };
        assert_eq!(s.label(), NliLabel::Entailment);
    }

    #[test]
    fn refusal_patterns() {
        let d = RefusalDetector::default();
        assert!(d.is_refusal("I'm sorry, but I can't help with that."));
        assert!(d.is_refusal("I cannot create content like this."));
        assert!(d.is_refusal("   "));
        assert!(!d.is_refusal("Premise: cities grow.\nMaxim: growth needs planning."));
    }

    #[test]
    fn request_defaults_match_decoding_settings() {
        let r = GenRequest::new("p", 3);
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.max_tokens, 200);
        assert!(GenRequest::new("", 1).validate().is_err());
        assert!(GenRequest::new("x", 0).validate().is_err());
    }
}
