//! Seed curation: label filter, cleaning, dedup, detector vote,
//! extraction, taxonomy assignment and standpoint consolidation.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use super::{argmax_first, BinaryLabel, PipelineError, SeedRecord};
use crate::backends::{BackendSet, Candidate, GenHints, GenRequest, GenTask};
use crate::domain::DEFAULT_PLACEHOLDER;
use crate::parse::{parse_extraction, parse_single_answer};
use crate::prompts::{self, PromptSet};
use crate::taxonomy::Taxonomy;
use crate::text::{contains_ci, cosine, replace_ci, squash_whitespace, whitespace_token_count};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub sources: Vec<super::adapters::SourceConfig>,
    pub dedup_threshold: f64,
    pub min_tokens: usize,
    pub majority_numerator: usize,
    pub majority_denominator: usize,
    /// Detector score at or above which a detector flags an item.
    pub detector_threshold: f64,
    pub min_class_size: usize,
    /// Extra classification rounds after the first when no mode exists.
    pub taxonomy_retry_cap: usize,
    /// Cosine at which two standpoints of one subgroup are paraphrases.
    pub consolidation_threshold: f64,
    /// Entailment floor for both directions between a standpoint and its
    /// canonical form.
    pub nli_threshold: f64,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            dedup_threshold: 0.80,
            min_tokens: 5,
            majority_numerator: 7,
            majority_denominator: 11,
            detector_threshold: 0.5,
            min_class_size: 20,
            taxonomy_retry_cap: 5,
            consolidation_threshold: 0.80,
            nli_threshold: 0.6,
            temperature: 0.0,
            max_tokens: 200,
        }
    }
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)https?://\S*|\bwww\.\S*").unwrap());
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#\w+").unwrap());

fn emoji_placeholder(grapheme: &str) -> Option<String> {
    let stripped: String = grapheme.chars().filter(|c| *c != '\u{FE0F}').collect();
    let e = emojis::get(grapheme).or_else(|| emojis::get(&stripped))?;
    // Plain ASCII characters (digits, '#', '*') are keycap bases, not emoji.
    if grapheme.is_ascii() {
        return None;
    }
    let code = e
        .shortcode()
        .map(str::to_string)
        .unwrap_or_else(|| e.name().to_lowercase().replace(|c: char| !c.is_alphanumeric(), "_"));
    Some(format!(" :{code}: "))
}

/// Removes URLs, @mentions and #hashtags, replaces each emoji with a
/// `:shortcode:` token and collapses whitespace.
pub fn clean_text(text: &str) -> String {
    let t = URL.replace_all(text, " ");
    let t = MENTION.replace_all(&t, " ");
    let t = HASHTAG.replace_all(&t, " ");
    let mut out = String::with_capacity(t.len());
    for g in t.graphemes(true) {
        match emoji_placeholder(g) {
            Some(p) => out.push_str(&p),
            None => out.push_str(g),
        }
    }
    squash_whitespace(&out)
}

/// Cleans the record and keeps it when at least `min_tokens` whitespace
/// tokens remain.
pub fn clean_and_filter(mut record: SeedRecord, min_tokens: usize) -> Option<SeedRecord> {
    let cleaned = clean_text(&record.raw_text);
    if whitespace_token_count(&cleaned) < min_tokens {
        return None;
    }
    record.clean_text = Some(cleaned);
    Some(record)
}

/// Merges records whose embeddings have cosine at least `threshold` and
/// whose target keys agree. Merging is transitive; each merged set keeps
/// the member with the smallest `source_id`, at its original position.
pub fn dedup(records: Vec<SeedRecord>, threshold: f64) -> Result<Vec<SeedRecord>, PipelineError> {
    for r in &records {
        if r.embedding.is_none() {
            return Err(PipelineError::MissingEmbedding(r.source_id.clone()));
        }
    }
    let n = records.len();
    let keys: Vec<Option<String>> = records.iter().map(SeedRecord::target_key).collect();
    let edges: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ei = records[i].embedding.as_deref().unwrap();
            let keys = &keys;
            let records = &records;
            (i + 1..n).filter_map(move |j| {
                (keys[i] == keys[j] && cosine(ei, records[j].embedding.as_deref().unwrap()) >= threshold)
                    .then_some((i, j))
            })
        })
        .collect();
    let mut uf = UnionFind::<usize>::new(n);
    for (i, j) in edges {
        uf.union(i, j);
    }
    let mut rep: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let root = uf.find_mut(i);
        rep.entry(root)
            .and_modify(|r| {
                if records[i].source_id < records[*r].source_id {
                    *r = i;
                }
            })
            .or_insert(i);
    }
    let keep: std::collections::HashSet<usize> = rep.into_values().collect();
    Ok(records.into_iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, r)| r).collect())
}

/// True iff strictly more than `numerator` of the `denominator` flags are set.
pub fn majority_vote(flags: &[bool], numerator: usize, denominator: usize) -> Result<bool, PipelineError> {
    if flags.len() != denominator {
        return Err(PipelineError::LengthMismatch { flags: flags.len(), denominator });
    }
    Ok(flags.iter().filter(|f| **f).count() > numerator)
}

/// Label held by at least two of the votes; `None` votes never count.
pub fn mode_of_votes(votes: &[Option<String>]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in votes.iter().flatten() {
        *counts.entry(v.as_str()).or_default() += 1;
    }
    let (label, c) = counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))?;
    (c >= 2).then(|| label.to_string())
}

/// Index of the member with the largest mean cosine to all members,
/// itself included; the first such member on ties.
pub fn medoid(embeddings: &[Vec<f64>]) -> Option<usize> {
    let means: Vec<f64> = embeddings
        .iter()
        .map(|a| embeddings.iter().map(|b| cosine(a, b)).sum::<f64>() / embeddings.len() as f64)
        .collect();
    argmax_first(&means)
}

/// Connected components of the graph linking members with cosine at least
/// `threshold`, each listed in ascending index order and ordered by their
/// first member.
pub fn similarity_clusters(embeddings: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let n = embeddings.len();
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if cosine(&embeddings[i], &embeddings[j]) >= threshold {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let labels = uf.into_labeling();
    let mut first: HashMap<usize, usize> = HashMap::new();
    for (i, root) in labels.into_iter().enumerate() {
        let f = *first.entry(root).or_insert(i);
        groups.entry(f).or_default().push(i);
    }
    groups.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consolidation {
    pub canonical: String,
    pub medoid: usize,
    /// Members whose standpoint fails entailment in either direction.
    pub flagged: Vec<usize>,
}

/// Record counts after each curation stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Funnel {
    pub stages: Vec<(String, usize)>,
}

impl Funnel {
    fn push(&mut self, stage: &str, n: usize) {
        if let Some((prev, m)) = self.stages.last() {
            assert!(n <= *m, "funnel grew from {m} ({prev}) to {n} ({stage})");
        }
        self.stages.push((stage.to_string(), n));
    }
}

/// Runs the curation steps against one backend set.
pub struct Curator<'a> {
    pub backends: &'a BackendSet,
    pub prompts: &'a PromptSet,
    pub taxonomy: &'a Taxonomy,
    pub cfg: &'a CurationConfig,
}

impl<'a> Curator<'a> {
    pub fn new(backends: &'a BackendSet, prompts: &'a PromptSet, taxonomy: &'a Taxonomy, cfg: &'a CurationConfig) -> Self {
        Self { backends, prompts, taxonomy, cfg }
    }

    fn request(&self, prompt: String, n: usize, task: GenTask, target: Option<String>, options: Vec<String>) -> GenRequest {
        GenRequest::new(prompt, n)
            .with_settings(self.cfg.temperature, self.cfg.max_tokens)
            .with_hints(GenHints { task, target, options })
    }

    /// Keeps hate-labeled records.
    pub fn keep_hate(&self, records: Vec<SeedRecord>) -> Vec<SeedRecord> {
        records.into_iter().filter(|r| r.binary_label == BinaryLabel::Hate).collect()
    }

    pub fn embed_all(&self, records: &mut [SeedRecord]) -> Result<(), PipelineError> {
        records.par_iter_mut().try_for_each(|r| {
            r.embedding = Some(self.backends.embed(r.text())?);
            Ok(())
        })
    }

    /// Keeps records flagged by a strict majority of detectors.
    pub fn verify(&self, records: Vec<SeedRecord>) -> Result<Vec<SeedRecord>, PipelineError> {
        let keep = records
            .par_iter()
            .map(|r| {
                let flags: Vec<bool> = self
                    .backends
                    .detector_scores(r.text())?
                    .into_iter()
                    .map(|s| s >= self.cfg.detector_threshold)
                    .collect();
                majority_vote(&flags, self.cfg.majority_numerator, self.cfg.majority_denominator)
            })
            .collect::<Result<Vec<bool>, PipelineError>>()?;
        Ok(records.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect())
    }

    /// Fills standpoint (with the placeholder token) and target phrase.
    /// `None` when the output cannot be parsed or the standpoint cannot be
    /// templated.
    pub fn extract(&self, mut record: SeedRecord) -> Result<Option<SeedRecord>, PipelineError> {
        let prompt = self.prompts.render(prompts::EXTRACTION, &[("text", record.text())])?;
        let req = self.request(prompt, 1, GenTask::Extraction, record.target_phrase.clone(), Vec::new());
        let Some(Candidate::Text(out)) = self.backends.generate(&req)?.pop() else {
            return Ok(None);
        };
        let Ok((standpoint, target)) = parse_extraction(&out) else {
            return Ok(None);
        };
        let standpoint = if standpoint.contains(DEFAULT_PLACEHOLDER) {
            standpoint
        } else if contains_ci(&standpoint, &target) {
            replace_ci(&standpoint, &target, DEFAULT_PLACEHOLDER)
        } else {
            return Ok(None);
        };
        record.standpoint = Some(standpoint);
        record.target_phrase = Some(target);
        Ok(Some(record))
    }

    fn classify(
        &self,
        template: &str,
        task: GenTask,
        vars: &[(&str, &str)],
        target: &str,
        options: &[String],
        resolve: &dyn Fn(&str) -> Option<String>,
    ) -> Result<String, PipelineError> {
        let prompt = self.prompts.render(template, vars)?;
        for attempt in 0..=self.cfg.taxonomy_retry_cap {
            let req = self.request(
                prompts::with_attempt(&prompt, attempt),
                3,
                task,
                Some(target.to_string()),
                options.to_vec(),
            );
            let votes: Vec<Option<String>> = self
                .backends
                .generate(&req)?
                .iter()
                .map(|c| c.text().and_then(|t| parse_single_answer(t).ok()).and_then(|a| resolve(&a)))
                .collect();
            if let Some(label) = mode_of_votes(&votes) {
                return Ok(label);
            }
        }
        Err(PipelineError::TaxonomyUnresolved(target.to_string()))
    }

    /// Domain of a target phrase.
    pub fn assign_level1(&self, standpoint: &str, target: &str) -> Result<String, PipelineError> {
        let options: Vec<String> = self.taxonomy.level1_names().map(str::to_string).collect();
        let joined = options.join(", ");
        self.classify(
            prompts::LEVEL1,
            GenTask::Level1,
            &[("standpoint", standpoint), ("target", target), ("options", &joined)],
            target,
            &options,
            &|a| self.taxonomy.find_level1(a).map(str::to_string),
        )
    }

    /// Subgroup within a domain.
    pub fn assign_level2(&self, standpoint: &str, target: &str, level1: &str) -> Result<String, PipelineError> {
        let options: Vec<String> = self
            .taxonomy
            .subgroups_of(level1)
            .ok_or_else(|| PipelineError::TaxonomyUnresolved(level1.to_string()))?
            .to_vec();
        let joined = options.join(", ");
        self.classify(
            prompts::LEVEL2,
            GenTask::Level2,
            &[("standpoint", standpoint), ("target", target), ("options", &joined), ("level1", level1)],
            target,
            &options,
            &|a| self.taxonomy.find_level2(level1, a).map(str::to_string),
        )
    }

    /// Domain and subgroup for one record. Level 1 is assigned once per distinct
    /// target phrase through `level1_cache`.
    pub fn assign_taxonomy(
        &self,
        mut record: SeedRecord,
        level1_cache: &std::sync::Mutex<HashMap<String, String>>,
    ) -> Result<SeedRecord, PipelineError> {
        let standpoint = record.standpoint.clone().unwrap_or_default();
        let target = record
            .target_phrase
            .clone()
            .ok_or_else(|| PipelineError::TaxonomyUnresolved(record.source_id.clone()))?;
        let key = target.trim().to_lowercase();
        let cached = level1_cache.lock().unwrap().get(&key).cloned();
        let level1 = match cached {
            Some(l) => l,
            None => {
                let l = self.assign_level1(&standpoint, &target)?;
                level1_cache.lock().unwrap().insert(key, l.clone());
                l
            }
        };
        let level2 = self.assign_level2(&standpoint, &target, &level1)?;
        record.level1 = Some(level1);
        record.level2 = Some(level2);
        Ok(record)
    }

    /// Consolidates one paraphrase cluster: picks the medoid standpoint and flags
    /// members that do not entail it both ways.
    pub fn consolidate_standpoints(&self, group: &[SeedRecord]) -> Result<Consolidation, PipelineError> {
        if group.is_empty() {
            return Err(PipelineError::EmptyGroup);
        }
        let standpoints: Vec<&str> = group.iter().map(|r| r.standpoint.as_deref().unwrap_or("")).collect();
        let embeddings = standpoints
            .par_iter()
            .map(|s| self.backends.embed(s))
            .collect::<Result<Vec<_>, _>>()?;
        let m = medoid(&embeddings).ok_or(PipelineError::EmptyGroup)?;
        let canonical = standpoints[m].to_string();
        let flagged = self.entailment_failures(&standpoints, &canonical)?;
        Ok(Consolidation { canonical, medoid: m, flagged })
    }

    fn bidirectional(&self, a: &str, b: &str) -> Result<bool, PipelineError> {
        let t = self.cfg.nli_threshold;
        Ok(self.backends.nli_score(a, b)?.p_ent >= t && self.backends.nli_score(b, a)?.p_ent >= t)
    }

    fn entailment_failures(&self, standpoints: &[&str], canonical: &str) -> Result<Vec<usize>, PipelineError> {
        let ok = standpoints
            .par_iter()
            .map(|s| self.bidirectional(s, canonical))
            .collect::<Result<Vec<bool>, _>>()?;
        Ok(ok.iter().enumerate().filter(|(_, k)| !**k).map(|(i, _)| i).collect())
    }

    /// One regeneration of a mismatched standpoint; `None` when the
    /// rewrite still fails entailment or loses the placeholder.
    pub fn regenerate(&self, standpoint: &str, canonical: &str, target: Option<&str>) -> Result<Option<String>, PipelineError> {
        let prompt = self
            .prompts
            .render(prompts::REGENERATE_STANDPOINT, &[("canonical", canonical), ("standpoint", standpoint)])?;
        let req = self.request(prompt, 1, GenTask::RegenerateStandpoint, target.map(str::to_string), Vec::new());
        let Some(Candidate::Text(out)) = self.backends.generate(&req)?.pop() else {
            return Ok(None);
        };
        let Ok(s) = parse_single_answer(&out) else { return Ok(None) };
        if !s.contains(DEFAULT_PLACEHOLDER) || !self.bidirectional(&s, canonical)? {
            return Ok(None);
        }
        Ok(Some(s))
    }

    /// Consolidation over all records: clusters standpoints within each subgroup,
    /// records the canonical standpoint and regenerates or drops members
    /// failing bidirectional entailment. Input order is preserved.
    pub fn consolidate(&self, records: Vec<SeedRecord>) -> Result<Vec<SeedRecord>, PipelineError> {
        let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_class.entry(r.level2.clone().unwrap_or_default()).or_default().push(i);
        }
        let mut records: Vec<Option<SeedRecord>> = records.into_iter().map(Some).collect();
        for idx in by_class.into_values() {
            let embeddings = idx
                .par_iter()
                .map(|&i| self.backends.embed(records[i].as_ref().unwrap().standpoint.as_deref().unwrap_or("")))
                .collect::<Result<Vec<_>, _>>()?;
            for cluster in similarity_clusters(&embeddings, self.cfg.consolidation_threshold) {
                let members: Vec<SeedRecord> = cluster.iter().map(|&k| records[idx[k]].clone().unwrap()).collect();
                let cluster_emb: Vec<Vec<f64>> = cluster.iter().map(|&k| embeddings[k].clone()).collect();
                let m = medoid(&cluster_emb).ok_or(PipelineError::EmptyGroup)?;
                let canonical = members[m].standpoint.clone().unwrap_or_default();
                let standpoints: Vec<&str> = members.iter().map(|r| r.standpoint.as_deref().unwrap_or("")).collect();
                let flagged = self.entailment_failures(&standpoints, &canonical)?;
                for (k, &ci) in cluster.iter().enumerate() {
                    let slot = &mut records[idx[ci]];
                    if flagged.contains(&k) {
                        let r = slot.as_mut().unwrap();
                        match self.regenerate(&standpoints[k].to_string(), &canonical, r.level2.as_deref())? {
                            Some(s) => r.standpoint = Some(s),
                            None => {
                                *slot = None;
                                continue;
                            }
                        }
                    }
                    slot.as_mut().unwrap().canonical_standpoint = Some(canonical.clone());
                }
            }
        }
        Ok(records.into_iter().flatten().collect())
    }

    /// Drops records of subgroups with fewer than `min_class_size` members.
    pub fn drop_small_classes(&self, records: Vec<SeedRecord>) -> Vec<SeedRecord> {
        let mut counts: HashMap<Option<String>, usize> = HashMap::new();
        for r in &records {
            *counts.entry(r.level2.clone()).or_default() += 1;
        }
        records
            .into_iter()
            .filter(|r| r.level2.is_some() && counts[&r.level2] >= self.cfg.min_class_size)
            .collect()
    }

    /// Runs every curation stage over ingested records.
    pub fn run(&self, records: Vec<SeedRecord>) -> Result<(Vec<SeedRecord>, Funnel), PipelineError> {
        let mut funnel = Funnel::default();
        funnel.push("ingested", records.len());
        let recs = self.keep_hate(records);
        funnel.push("a1_hate", recs.len());
        let mut recs = recs;
        self.embed_all(&mut recs)?;
        let recs = dedup(recs, self.cfg.dedup_threshold)?;
        funnel.push("a2_dedup", recs.len());
        let recs: Vec<SeedRecord> = recs.into_iter().filter_map(|r| clean_and_filter(r, self.cfg.min_tokens)).collect();
        funnel.push("a3_clean", recs.len());
        let recs = self.verify(recs)?;
        funnel.push("a4_verified", recs.len());
        let recs: Vec<SeedRecord> = recs
            .into_par_iter()
            .map(|r| self.extract(r))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        funnel.push("a5_extracted", recs.len());
        let cache = std::sync::Mutex::new(HashMap::new());
        let recs: Vec<SeedRecord> = recs
            .into_par_iter()
            .map(|r| match self.assign_taxonomy(r, &cache) {
                Err(PipelineError::TaxonomyUnresolved(t)) => {
                    log::warn!("taxonomy unresolved for `{t}`; dropping record");
                    Ok(None)
                }
                other => other.map(Some),
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        funnel.push("a6_a7_taxonomy", recs.len());
        let recs = self.drop_small_classes(recs);
        funnel.push("a7_min_class", recs.len());
        let recs = self.consolidate(recs)?;
        funnel.push("a8_consolidated", recs.len());
        Ok((recs, funnel))
    }
}
