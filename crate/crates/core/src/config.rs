//! Run configuration: one TOML (or JSON) file, environment overrides for
//! endpoints, and resolution of asset paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::cached::{with_cache, BlobStore};
use crate::backends::mock::MockBackend;
use crate::backends::remote::{RemoteClient, RemoteConfig};
use crate::backends::{BackendError, BackendSet};
use crate::domain::LocusPool;
use crate::eval::{ModelCluster, ScaffoldMode};
use crate::hashing::content_hash;
use crate::pipeline::{AugmentConfig, CurationConfig};
use crate::prompts::PromptSet;
use crate::safety::SafetyEnsembleConfig;
use crate::search::SearchConfig;
use crate::taxonomy::Taxonomy;
use crate::domain::Tier;

pub const ENV_BACKEND: &str = "AMTGEN_BACKEND";
pub const ENV_REMOTE_URL: &str = "AMTGEN_REMOTE_URL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Backend selector: `mock` or `remote:<url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock,
    Remote(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim() {
            "mock" => Ok(Self::Mock),
            "remote" => Ok(Self::Remote(String::new())),
            other => other
                .strip_prefix("remote:")
                .map(|u| Self::Remote(u.to_string()))
                .ok_or_else(|| ConfigError::Invalid(format!("backend `{other}` is neither `mock` nor `remote:<url>`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub cap: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { cap: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterConfig {
    /// Families sampled for non-hate counterparts.
    pub sample: usize,
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self { sample: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tiers: Vec<Tier>,
    pub scaffold: Option<ScaffoldMode>,
    pub clusters: Vec<ModelCluster>,
    pub max_tokens: usize,
    /// Also query non-hate counterparts when `nonhate.jsonl` exists.
    pub include_nonhate: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tiers: Tier::ALL.to_vec(), scaffold: None, clusters: Vec::new(), max_tokens: 200, include_nonhate: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Seeds used for the generation-strategy comparison.
    pub sample: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { sample: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `mock` or `remote:<url>`.
    pub backend: String,
    pub remote: RemoteConfig,
    pub rng_seed: u64,
    pub search: SearchConfig,
    pub safety: SafetyEnsembleConfig,
    pub curation: CurationConfig,
    pub selection: SelectionConfig,
    pub augment: AugmentConfig,
    pub counter: CounterConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub taxonomy_path: Option<PathBuf>,
    pub locus_path: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: "mock".into(),
            remote: RemoteConfig::default(),
            rng_seed: 0,
            search: SearchConfig::default(),
            safety: SafetyEnsembleConfig::default(),
            curation: CurationConfig::default(),
            selection: SelectionConfig::default(),
            augment: AugmentConfig::default(),
            counter: CounterConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            taxonomy_path: None,
            locus_path: None,
            prompt_dir: None,
            cache_dir: None,
            parallelism: None,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })
}

/// Everything a stage needs, with assets loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub taxonomy: Taxonomy,
    pub prompts: PromptSet,
    /// Hash of the config and every loaded asset.
    pub config_hash: String,
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
        }
    }

    /// Reads the file (defaults when `None`), makes relative asset paths
    /// relative to the file, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let mut c = Self::parse(&read(p)?)?;
                let base = p.parent().unwrap_or(Path::new("."));
                for slot in [&mut c.taxonomy_path, &mut c.locus_path, &mut c.prompt_dir, &mut c.cache_dir] {
                    if let Some(v) = slot.as_mut() {
                        if v.is_relative() {
                            *v = base.join(&*v);
                        }
                    }
                }
                for s in &mut c.curation.sources {
                    if s.path.is_relative() {
                        s.path = base.join(&s.path);
                    }
                }
                c
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(b) = get(ENV_BACKEND).filter(|v| !v.is_empty()) {
            self.backend = b;
        }
        if let Some(u) = get(ENV_REMOTE_URL).filter(|v| !v.is_empty()) {
            self.remote.base_url = u;
        }
    }

    pub fn backend_spec(&self) -> Result<BackendSpec, ConfigError> {
        self.backend.parse()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backend_spec()?;
        self.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::safety::SafetyEnsemble::new(self.safety.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let c = &self.curation;
        if c.majority_numerator >= c.majority_denominator {
            return Err(ConfigError::Invalid("majority numerator must be below the denominator".into()));
        }
        for (n, v) in [
            ("dedup_threshold", c.dedup_threshold),
            ("consolidation_threshold", c.consolidation_threshold),
            ("nli_threshold", c.nli_threshold),
            ("detector_threshold", c.detector_threshold),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("curation.{n} out of range")));
            }
        }
        if self.augment.n_candidates == 0 {
            return Err(ConfigError::Invalid("augment.n_candidates must be positive".into()));
        }
        if self.parallelism == Some(0) {
            return Err(ConfigError::Invalid("parallelism must be positive".into()));
        }
        Ok(())
    }

    /// Loads assets, copies the run seed into the search config and
    /// computes the config hash.
    pub fn resolve(mut self) -> Result<Resolved, ConfigError> {
        self.search.rng_seed = self.rng_seed;
        let taxonomy_src = match &self.taxonomy_path {
            Some(p) => Some(read(p)?),
            None => None,
        };
        let taxonomy = match &taxonomy_src {
            Some(t) => Taxonomy::from_toml(t).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => Taxonomy::default(),
        };
        if let Some(p) = &self.locus_path {
            self.search.locus_pool = LocusPool::from_toml(&read(p)?).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let prompts = match &self.prompt_dir {
            Some(d) => PromptSet::from_dir(d).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => PromptSet::default(),
        };
        self.validate()?;
        let mut hashed = self.clone();
        // Cache location and thread count never change outputs.
        hashed.cache_dir = None;
        hashed.parallelism = None;
        let json = serde_json::to_string(&hashed).expect("config serializes");
        let tax_json = serde_json::to_string(taxonomy.domains()).expect("taxonomy serializes");
        let config_hash = content_hash(&[json.as_str(), &tax_json, &prompts.fingerprint()]);
        Ok(Resolved { config: self, taxonomy, prompts, config_hash })
    }
}

impl Resolved {
    /// Builds the configured backend set, wrapped in the disk cache when a
    /// cache directory is set.
    pub fn backends(&self) -> Result<BackendSet, BackendError> {
        let set = match self.config.backend_spec().map_err(|e| BackendError::InvalidInput(e.to_string()))? {
            BackendSpec::Mock => MockBackend::seeded(self.config.rng_seed).into_backend_set(),
            BackendSpec::Remote(url) => {
                let mut rc = self.config.remote.clone();
                if !url.is_empty() {
                    rc.base_url = url;
                }
                RemoteClient::new(rc)?.into_backend_set()?
            }
        };
        Ok(match &self.config.cache_dir {
            Some(dir) => with_cache(set, BlobStore::new(dir)),
            None => set,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_hyperparameter_table() {
        let c = RunConfig::parse("").unwrap();
        let r = &c.search.reward;
        assert_eq!((r.lambda_contr, r.alpha_nll, r.beta_entropy, r.beta_redund, r.gamma_var, r.epsilon), (0.4, 0.5, 0.5, 0.5, 0.2, 1e-6));
        let s = &c.search;
        assert_eq!((s.tau_ent, s.tau_contr, s.beam_size, s.max_steps, s.k_premise), (0.6, 0.4, 3, 2, 5));
        assert_eq!((s.temperature, s.max_tokens), (0.0, 200));
        assert_eq!(c.selection.cap, 300);
        assert_eq!(c.augment.n_candidates, 10);
    }

    #[test]
    fn toml_overrides_and_unknown_keys() {
        let c = RunConfig::parse("rng_seed = 7\n[search]\nbeam_size = 9\n[search.reward]\nredundancy_form = \"appendix\"\n").unwrap();
        assert_eq!((c.rng_seed, c.search.beam_size), (7, 9));
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("[search]\nbogus = 1").is_err());
    }

    #[test]
    fn json_is_accepted() {
        let c = RunConfig::parse(r#"{"rng_seed": 3, "backend": "remote:http://x:1"}"#).unwrap();
        assert_eq!(c.backend_spec().unwrap(), BackendSpec::Remote("http://x:1".into()));
    }

    #[test]
    fn env_overrides() {
        let mut c = RunConfig::default();
        c.apply_env(|k| match k {
            ENV_BACKEND => Some("remote:http://h:9".into()),
            ENV_REMOTE_URL => Some("http://other:1".into()),
            _ => None,
        });
        assert_eq!(c.backend, "remote:http://h:9");
        assert_eq!(c.remote.base_url, "http://other:1");
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!("mock".parse::<BackendSpec>().unwrap(), BackendSpec::Mock);
        assert!("grpc://x".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn hash_tracks_outputs_not_plumbing() {
        let a = RunConfig::default().resolve().unwrap().config_hash;
        let b = RunConfig { parallelism: Some(2), cache_dir: Some("/tmp/x".into()), ..Default::default() }.resolve().unwrap().config_hash;
        let c = RunConfig { rng_seed: 1, ..Default::default() }.resolve().unwrap().config_hash;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::default();
        c.search.max_steps = 3;
        assert!(c.resolve().is_err());
        let c = RunConfig { backend: "nope".into(), ..Default::default() };
        assert!(c.validate().is_err());
    }
}
