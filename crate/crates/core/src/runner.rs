//! Stage drivers over a stage directory.
//!
//! Every stage reads its inputs, writes its outputs atomically and records
//! a manifest entry with the config hash, input and output digests, counts
//! and the entry hashes of the stages that produced its inputs. A stage
//! whose config hash and input digests match its entry, and whose outputs
//! are still intact, is skipped.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ablation::{run_ablation, AblationSeed};
use crate::backends::{BackendError, BackendSet, Candidate, GenHints, GenRequest, GenTask};
use crate::config::{ConfigError, Resolved};
use crate::domain::{resolve_target, AmtInstance, SeedRef, TargetGroupRef, Tier, TierFamily};
use crate::eval::{build_report, moderation_prompt, run_moderation, EvalError, EvalRecord, FamilyIndex, PredictionRow, Report, ScaffoldMode};
use crate::hashing::{bytes_hash, seed64};
use crate::io::{atomic_write, read_jsonl, to_jsonl, IoError};
use crate::pipeline::adapters::AdapterCounts;
use crate::pipeline::select::class_sizes;
use crate::pipeline::{counter_standpoint, select_benchmark, Augmenter, BinaryLabel, Curator, PipelineError, SeedRecord};
use crate::safety::{SafetyEnsemble, SafetyError};
use crate::search::{SearchError, SearchStats, Searcher};

pub const SEEDS: &str = "seeds.jsonl";
pub const INSTANCES: &str = "instances.jsonl";
pub const TRACES: &str = "traces.jsonl";
pub const SELECTED: &str = "selected.jsonl";
pub const BENCHMARK: &str = "benchmark.jsonl";
pub const NONHATE: &str = "nonhate.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TIERS: &str = "report_tiers.csv";
pub const REPORT_DOMAINS: &str = "report_domains.csv";
pub const REPORT_SUBGROUPS: &str = "report_subgroups.csv";
pub const RADAR: &str = "radar.csv";
pub const ABLATION: &str = "ablation.json";
pub const MANIFEST: &str = "manifest.json";

/// Prefix of family ids of non-hate counterparts.
pub const NONHATE_PREFIX: &str = "nh-";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("stage `{stage}` needs `{file}`; run `{producer}` first")]
    MissingUpstream { stage: String, file: String, producer: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
}

impl RunError {
    fn backend(&self) -> Option<&BackendError> {
        match self {
            RunError::Backend(b)
            | RunError::Search(SearchError::Backend(b))
            | RunError::Search(SearchError::Safety(SafetyError::Backend(b)))
            | RunError::Pipeline(PipelineError::Backend(b))
            | RunError::Pipeline(PipelineError::Search(SearchError::Backend(b)))
            | RunError::Pipeline(PipelineError::Search(SearchError::Safety(SafetyError::Backend(b))))
            | RunError::Eval(EvalError::Backend(b))
            | RunError::Safety(SafetyError::Backend(b)) => Some(b),
            _ => None,
        }
    }

    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::MissingUpstream { .. } => "MissingUpstream",
            RunError::Config(_) | RunError::Invalid(_) => "ConfigInvalid",
            RunError::Search(SearchError::InvalidConfig(_)) | RunError::Safety(SafetyError::InvalidConfig(_)) => "ConfigInvalid",
            _ => match self.backend() {
                Some(BackendError::BackendUnavailable(_)) => "BackendUnavailable",
                Some(BackendError::MalformedResponse(_)) => "MalformedResponse",
                Some(_) => "BackendError",
                None => match self {
                    RunError::Io(_) => "IoError",
                    RunError::Eval(_) => "EvalError",
                    _ => "PipelineError",
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    /// Producing stage name to the hash of its manifest entry.
    pub upstream: BTreeMap<String, String>,
    pub outputs: Vec<FileDigest>,
    pub counts: Value,
}

impl StageEntry {
    pub fn entry_hash(&self) -> String {
        bytes_hash(&serde_json::to_vec(self).expect("entry serializes"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let p = dir.join(MANIFEST);
        if !p.exists() {
            return Ok(Self::default());
        }
        let text = crate::io::read_to_string(&p)?;
        serde_json::from_str(&text).map_err(|e| RunError::Invalid(format!("{}: {e}", p.display())))
    }

    fn save(&self, dir: &Path) -> Result<(), RunError> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(IoError::from)?;
        bytes.push(b'\n');
        atomic_write(&dir.join(MANIFEST), &bytes)?;
        Ok(())
    }

    /// Stage whose recorded outputs include `path`.
    pub fn producer_of(&self, path: &str) -> Option<(&String, &StageEntry)> {
        self.stages.iter().find(|(_, e)| e.outputs.iter().any(|o| o.path == path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
    pub counts: Value,
}

/// A stage input: a file in the stage directory made by `producer`, or an
/// external file.
#[derive(Debug, Clone)]
struct Input {
    label: String,
    path: PathBuf,
    producer: Option<&'static str>,
}

type StageOutput = (Vec<(&'static str, Vec<u8>)>, Value);

/// Counterpart record of the non-hate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonHateRecord {
    pub family_id: String,
    pub standpoint: String,
    pub counter_standpoint: String,
    pub instance: AmtInstance,
}

impl NonHateRecord {
    pub fn eval_id(&self) -> String {
        format!("{NONHATE_PREFIX}{}", self.family_id)
    }
}

pub struct Runner {
    pub resolved: Resolved,
    pub dir: PathBuf,
    backends: OnceLock<BackendSet>,
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, RunError> {
    let mut b = serde_json::to_vec_pretty(v).map_err(IoError::from)?;
    b.push(b'\n');
    Ok(b)
}

fn digest(label: &str, path: &Path) -> Result<FileDigest, RunError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Fs { path: path.display().to_string(), source })?;
    Ok(FileDigest { path: label.to_string(), sha256: bytes_hash(&bytes) })
}

/// Seeded sample of `k` indices out of `n`, returned in ascending order.
pub fn sample_indices(n: usize, k: usize, seed: u64, salt: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed64(&[salt.as_bytes(), &seed.to_le_bytes()]));
    idx.shuffle(&mut rng);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

impl Runner {
    pub fn new(resolved: Resolved, dir: impl Into<PathBuf>) -> Self {
        Self { resolved, dir: dir.into(), backends: OnceLock::new() }
    }

    /// Uses the given backends instead of building them from the config.
    pub fn with_backends(self, backends: BackendSet) -> Self {
        let _ = self.backends.set(backends);
        self
    }

    fn backends(&self) -> Result<&BackendSet, RunError> {
        if let Some(b) = self.backends.get() {
            return Ok(b);
        }
        let b = self.resolved.backends()?;
        Ok(self.backends.get_or_init(|| b))
    }

    fn safety(&self) -> Result<SafetyEnsemble, RunError> {
        Ok(SafetyEnsemble::new(self.resolved.config.safety.clone())?)
    }

    fn staged(&self, file: &str, producer: &'static str) -> Input {
        Input { label: file.to_string(), path: self.dir.join(file), producer: Some(producer) }
    }

    fn external(path: &Path) -> Input {
        Input { label: path.display().to_string(), path: path.to_path_buf(), producer: None }
    }

    fn stage(&self, name: &str, inputs: Vec<Input>, body: impl FnOnce() -> Result<StageOutput, RunError>) -> Result<StageReport, RunError> {
        for i in &inputs {
            if !i.path.exists() {
                return Err(match i.producer {
                    Some(p) => RunError::MissingUpstream { stage: name.into(), file: i.label.clone(), producer: p.into() },
                    None => RunError::Invalid(format!("input `{}` does not exist", i.label)),
                });
            }
        }
        let digests = inputs.iter().map(|i| digest(&i.label, &i.path)).collect::<Result<Vec<_>, _>>()?;
        let mut manifest = Manifest::load(&self.dir)?;
        let hash = &self.resolved.config_hash;
        if let Some(e) = manifest.stages.get(name) {
            let intact = e
                .outputs
                .iter()
                .all(|o| digest(&o.path, &self.dir.join(&o.path)).map(|d| d == *o).unwrap_or(false));
            if &e.config_hash == hash && e.inputs == digests && intact {
                log::info!("{name}: inputs and config unchanged, skipping");
                return Ok(StageReport { stage: name.into(), status: StageStatus::Skipped, counts: e.counts.clone() });
            }
        }
        let upstream: BTreeMap<String, String> = inputs
            .iter()
            .filter(|i| i.producer.is_some())
            .filter_map(|i| manifest.producer_of(&i.label).map(|(s, e)| (s.clone(), e.entry_hash())))
            .collect();
        let (files, counts) = body()?;
        let mut outputs = Vec::new();
        for (file, bytes) in &files {
            atomic_write(&self.dir.join(file), bytes)?;
            outputs.push(FileDigest { path: file.to_string(), sha256: bytes_hash(bytes) });
        }
        manifest.stages.insert(
            name.into(),
            StageEntry { config_hash: hash.clone(), inputs: digests, upstream, outputs, counts: counts.clone() },
        );
        manifest.save(&self.dir)?;
        Ok(StageReport { stage: name.into(), status: StageStatus::Ran, counts })
    }

    /// Ingests the configured sources, or a SeedRecord JSONL file, and runs
    /// curation into `seeds.jsonl`.
    pub fn curate(&self, records: Option<&Path>) -> Result<StageReport, RunError> {
        let cfg = &self.resolved.config.curation;
        let inputs: Vec<Input> = match records {
            Some(p) => vec![Self::external(p)],
            None => cfg.sources.iter().map(|s| Self::external(&s.path)).collect(),
        };
        if inputs.is_empty() {
            return Err(RunError::Invalid("curate needs `curation.sources` or a records file".into()));
        }
        self.stage("curate", inputs, || {
            let mut adapters: BTreeMap<String, AdapterCounts> = BTreeMap::new();
            let raw = match records {
                Some(p) => read_jsonl::<SeedRecord>(p)?,
                None => {
                    let mut all = Vec::new();
                    for s in &cfg.sources {
                        let (recs, counts) = s.load(Path::new("."))?;
                        adapters.insert(s.name.clone(), counts);
                        all.extend(recs);
                    }
                    all
                }
            };
            let curator = Curator::new(self.backends()?, &self.resolved.prompts, &self.resolved.taxonomy, cfg);
            let (mut seeds, funnel) = curator.run(raw)?;
            for s in &mut seeds {
                s.embedding = None;
            }
            let counts = json!({ "adapters": adapters, "funnel": funnel.stages });
            Ok((vec![(SEEDS, to_jsonl(&seeds)?)], counts))
        })
    }

    fn target_of(&self, seed: &SeedRecord) -> Option<TargetGroupRef> {
        let level2 = seed.level2.as_deref()?;
        Some(
            self.resolved
                .taxonomy
                .target_ref(level2)
                .unwrap_or_else(|| TargetGroupRef::new(seed.level1.clone().unwrap_or_default(), level2)),
        )
    }

    /// Search inputs of a curated seed: the target-resolved standpoint, the
    /// target group and the seed reference.
    fn search_input(&self, seed: &SeedRecord) -> Option<AblationSeed> {
        let tg = self.target_of(seed)?;
        let sp = seed.canonical_standpoint.as_deref().or(seed.standpoint.as_deref())?;
        Some(AblationSeed {
            standpoint: resolve_target(sp, &tg),
            seed: SeedRef::new(seed.source_id.clone(), seed.text()),
            hard_seed: seed.text().to_string(),
            target_group: tg,
        })
    }

    /// One search per curated seed into `instances.jsonl`, with traces.
    pub fn generate(&self) -> Result<StageReport, RunError> {
        self.stage("generate", vec![self.staged(SEEDS, "curate")], || {
            let seeds: Vec<SeedRecord> = read_jsonl(&self.dir.join(SEEDS))?;
            let inputs: Vec<AblationSeed> = seeds.iter().filter_map(|s| self.search_input(s)).collect();
            let safety = self.safety()?;
            let backends = self.backends()?;
            let searcher = Searcher::new(backends, &self.resolved.prompts, &safety, &self.resolved.config.search);
            let results = inputs
                .par_iter()
                .map(|i| match searcher.run_traced(&i.standpoint, &i.target_group, &i.seed) {
                    (Ok(mut o), st, _) => Ok((Some(o.instance.clone()), st, std::mem::take(&mut o.trace))),
                    (Err(SearchError::BeamExhausted { stage }), st, trace) => {
                        log::warn!("{}: beam exhausted at {stage}", i.seed.source_id);
                        Ok((None, st, trace))
                    }
                    (Err(e), _, _) => Err(e),
                })
                .collect::<Result<Vec<_>, SearchError>>()?;
            let mut stats = SearchStats::default();
            let mut instances = Vec::new();
            let mut traces = Vec::new();
            for (inst, st, trace) in results {
                stats.add(&st);
                instances.extend(inst);
                traces.extend(trace);
            }
            let counts = json!({
                "seeds": seeds.len(),
                "searchable": inputs.len(),
                "instances": instances.len(),
                "exhausted": inputs.len() - instances.len(),
                "candidates": stats,
            });
            Ok((vec![(INSTANCES, to_jsonl(&instances)?), (TRACES, to_jsonl(&traces)?)], counts))
        })
    }

    /// Per-subgroup cap into `selected.jsonl`.
    pub fn select(&self) -> Result<StageReport, RunError> {
        self.stage("select", vec![self.staged(INSTANCES, "generate")], || {
            let all: Vec<AmtInstance> = read_jsonl(&self.dir.join(INSTANCES))?;
            let before = class_sizes(&all);
            let selected = select_benchmark(all, self.resolved.config.selection.cap);
            let counts = json!({ "before": before, "after": class_sizes(&selected), "selected": selected.len() });
            Ok((vec![(SELECTED, to_jsonl(&selected)?)], counts))
        })
    }

    /// Tier families into `benchmark.jsonl`.
    pub fn augment(&self) -> Result<StageReport, RunError> {
        let inputs = vec![self.staged(SELECTED, "select"), self.staged(SEEDS, "curate")];
        self.stage("augment", inputs, || {
            let selected: Vec<AmtInstance> = read_jsonl(&self.dir.join(SELECTED))?;
            let seeds: Vec<SeedRecord> = read_jsonl(&self.dir.join(SEEDS))?;
            let by_id: HashMap<&str, &SeedRecord> = seeds.iter().map(|s| (s.source_id.as_str(), s)).collect();
            let aug = Augmenter::new(self.backends()?, &self.resolved.prompts, &self.resolved.config.augment);
            let results = selected
                .par_iter()
                .map(|inst| {
                    let seed = by_id.get(inst.provenance.source_id.as_str()).ok_or_else(|| {
                        RunError::Invalid(format!("instance source `{}` is not among the seeds", inst.provenance.source_id))
                    })?;
                    match aug.family(inst, seed.text()) {
                        Ok(f) => Ok(Some(f)),
                        Err(PipelineError::NoValidCandidate(what)) => {
                            log::warn!("{}: no valid candidate for {what}", inst.provenance.source_id);
                            Ok(None)
                        }
                        Err(e) => Err(e.into()),
                    }
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let failed = results.iter().filter(|r| r.is_none()).count();
            let mut seen = std::collections::BTreeSet::new();
            let mut families = Vec::new();
            let mut duplicates = 0;
            for f in results.into_iter().flatten() {
                if seen.insert(f.family_id.clone()) {
                    families.push(f);
                } else {
                    duplicates += 1;
                }
            }
            let counts = json!({ "selected": selected.len(), "families": families.len(), "no_candidate": failed, "duplicate_family": duplicates });
            Ok((vec![(BENCHMARK, to_jsonl(&families)?)], counts))
        })
    }

    /// Non-hate counterparts of a seeded sample of families into
    /// `nonhate.jsonl`.
    pub fn counter(&self) -> Result<StageReport, RunError> {
        self.stage("counter", vec![self.staged(BENCHMARK, "augment")], || {
            let families: Vec<TierFamily> = read_jsonl(&self.dir.join(BENCHMARK))?;
            let cfg = &self.resolved.config;
            let picked = sample_indices(families.len(), cfg.counter.sample, cfg.rng_seed, "counter");
            let backends = self.backends()?;
            let safety = self.safety()?;
            let searcher = Searcher::new(backends, &self.resolved.prompts, &safety, &cfg.search);
            let results = picked
                .par_iter()
                .map(|&i| {
                    let f = &families[i];
                    let tg = &f.base.target_group;
                    let counter = match counter_standpoint(&f.base.standpoint, tg, backends, &self.resolved.prompts, &cfg.augment) {
                        Ok(c) => c,
                        Err(PipelineError::NoValidCandidate(_)) => return Ok(None),
                        Err(e) => return Err(RunError::from(e)),
                    };
                    let seed = SeedRef::new(format!("{NONHATE_PREFIX}{}", f.family_id), &counter);
                    match searcher.run(&counter, tg, &seed) {
                        Ok(o) => Ok(Some(NonHateRecord {
                            family_id: f.family_id.clone(),
                            standpoint: f.base.standpoint.clone(),
                            counter_standpoint: counter,
                            instance: o.instance,
                        })),
                        Err(SearchError::BeamExhausted { .. }) => Ok(None),
                        Err(e) => Err(e.into()),
                    }
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let records: Vec<NonHateRecord> = results.into_iter().flatten().collect();
            let counts = json!({ "families": families.len(), "sampled": picked.len(), "records": records.len() });
            Ok((vec![(NONHATE, to_jsonl(&records)?)], counts))
        })
    }

    /// Queries the configured generator as a moderator into
    /// `predictions.jsonl`.
    pub fn evaluate(&self) -> Result<StageReport, RunError> {
        let cfg = &self.resolved.config.eval;
        let mut inputs = vec![self.staged(BENCHMARK, "augment")];
        let with_nonhate = cfg.include_nonhate && self.dir.join(NONHATE).exists();
        if with_nonhate {
            inputs.push(self.staged(NONHATE, "counter"));
        }
        self.stage("evaluate", inputs, || {
            let families: Vec<TierFamily> = read_jsonl(&self.dir.join(BENCHMARK))?;
            let backends = self.backends()?;
            let prompts = &self.resolved.prompts;
            let mut rows = run_moderation(&families, &cfg.tiers, cfg.scaffold, backends, prompts, cfg.max_tokens)?;
            let hate_rows = rows.len();
            if with_nonhate {
                let records: Vec<NonHateRecord> = read_jsonl(&self.dir.join(NONHATE))?;
                rows.extend(moderate_nonhate(&records, cfg.scaffold, backends, prompts, cfg.max_tokens)?);
            }
            let counts = json!({ "families": families.len(), "hate_rows": hate_rows, "nonhate_rows": rows.len() - hate_rows });
            Ok((vec![(PREDICTIONS, to_jsonl(&rows)?)], counts))
        })
    }

    /// Aggregates predictions (the stage's own, or an external file) into
    /// the JSON report and CSV matrices.
    pub fn report(&self, predictions: Option<&Path>) -> Result<StageReport, RunError> {
        let pred_input = match predictions {
            Some(p) => Self::external(p),
            None => self.staged(PREDICTIONS, "evaluate"),
        };
        let pred_path = pred_input.path.clone();
        let mut inputs = vec![pred_input];
        let bench = self.dir.join(BENCHMARK);
        if bench.exists() {
            inputs.push(self.staged(BENCHMARK, "augment"));
        }
        self.stage("report", inputs, || {
            let rows: Vec<PredictionRow> = read_jsonl(&pred_path)?;
            let records: Vec<EvalRecord> = rows.iter().map(EvalRecord::from).collect();
            let index = if bench.exists() {
                let ix = FamilyIndex::from_families(&read_jsonl::<TierFamily>(&bench)?);
                let covered = records
                    .iter()
                    .filter(|r| r.ground_truth == BinaryLabel::Hate)
                    .all(|r| ix.level1.contains_key(&r.family_id));
                if !covered {
                    log::warn!("predictions reference families outside {BENCHMARK}; skipping domain breakdowns");
                }
                covered.then_some(ix)
            } else {
                None
            };
            let report: Report = build_report(&records, &self.resolved.config.eval.clusters, index.as_ref())?;
            let counts = json!({ "records": records.len(), "models": report.models.len() });
            Ok((
                vec![
                    (REPORT_JSON, json_bytes(&report)?),
                    (REPORT_TIERS, report.tier_csv().into_bytes()),
                    (REPORT_DOMAINS, Report::group_csv(&report.domains).into_bytes()),
                    (REPORT_SUBGROUPS, Report::group_csv(&report.subgroups).into_bytes()),
                    (RADAR, report.radar_csv().into_bytes()),
                ],
                counts,
            ))
        })
    }

    /// Generation-strategy comparison over a seeded sample of seeds into
    /// `ablation.json`.
    pub fn ablate(&self) -> Result<StageReport, RunError> {
        self.stage("ablate", vec![self.staged(SEEDS, "curate")], || {
            let seeds: Vec<SeedRecord> = read_jsonl(&self.dir.join(SEEDS))?;
            let eligible: Vec<AblationSeed> = seeds.iter().filter_map(|s| self.search_input(s)).collect();
            let cfg = &self.resolved.config;
            let picked: Vec<AblationSeed> = sample_indices(eligible.len(), cfg.ablation.sample, cfg.rng_seed, "ablate")
                .into_iter()
                .map(|i| eligible[i].clone())
                .collect();
            let safety = self.safety()?;
            let report = run_ablation(&picked, self.backends()?, &self.resolved.prompts, &safety, &cfg.search)?;
            let counts = json!({ "seeds": picked.len() });
            Ok((vec![(ABLATION, json_bytes(&report)?)], counts))
        })
    }

    /// Every stage from curation to the report, in order.
    pub fn run_all(&self, records: Option<&Path>) -> Result<Vec<StageReport>, RunError> {
        Ok(vec![
            self.curate(records)?,
            self.generate()?,
            self.select()?,
            self.augment()?,
            self.counter()?,
            self.evaluate()?,
            self.report(None)?,
        ])
    }
}

/// Moderation rows for non-hate counterparts, presented like the base tier.
pub fn moderate_nonhate(
    records: &[NonHateRecord],
    scaffold: Option<ScaffoldMode>,
    backends: &BackendSet,
    prompts: &crate::prompts::PromptSet,
    max_tokens: usize,
) -> Result<Vec<PredictionRow>, EvalError> {
    let model_id = backends.generator.id();
    records
        .par_iter()
        .map(|r| {
            let i = &r.instance;
            let premise = scaffold.filter(|m| *m != ScaffoldMode::Ed).map(|_| i.premise.as_str());
            let maxim = scaffold.filter(|m| *m == ScaffoldMode::EdPM).map(|_| i.maxim.as_str());
            let prompt = moderation_prompt(prompts, &i.surface_text(), premise, maxim)?;
            let req = GenRequest::new(prompt, 1)
                .with_settings(0.0, max_tokens)
                .with_hints(GenHints { task: GenTask::Moderation, target: None, options: Vec::new() });
            let raw_response = match backends.generate(&req)?.pop() {
                Some(Candidate::Text(t)) | Some(Candidate::Refused(t)) => t,
                None => String::new(),
            };
            Ok(PredictionRow {
                family_id: r.eval_id(),
                tier: Tier::SoftBase,
                model_id: model_id.clone(),
                raw_response,
                ground_truth: BinaryLabel::NonHate,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn sample_is_sorted_and_seeded() {
        let a = sample_indices(100, 10, 7, "x");
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_indices(100, 10, 7, "x"));
        assert_ne!(a, sample_indices(100, 10, 8, "x"));
        assert_eq!(sample_indices(3, 10, 0, "x"), vec![0, 1, 2]);
    }

    #[test]
    fn missing_upstream_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let r = Runner::new(RunConfig::default().resolve().unwrap(), dir.path());
        let e = r.select().unwrap_err();
        assert_eq!(e.kind(), "MissingUpstream");
        assert!(e.to_string().contains("generate"));
    }

    #[test]
    fn error_kinds() {
        let e = RunError::Search(SearchError::Backend(BackendError::BackendUnavailable("x".into())));
        assert_eq!(e.kind(), "BackendUnavailable");
        assert_eq!(RunError::Config(ConfigError::Invalid("x".into())).kind(), "ConfigInvalid");
    }
}
