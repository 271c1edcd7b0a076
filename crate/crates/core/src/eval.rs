//! Detector evaluation: strict prediction parsing, hate success rate per
//! tier, tier deltas, domain breakdowns and report tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSet, Candidate, GenHints, GenRequest, GenTask};
use crate::domain::{AmtInstance, Tier, TierFamily};
use crate::pipeline::BinaryLabel;
use crate::prompts::{self, PromptError, PromptSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no records to score")]
    EmptyInput,
    #[error("records mix {0}")]
    Mixed(&'static str),
    #[error("family `{0}` has no domain")]
    UnknownFamily(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Hateful,
    Safe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Hateful,
    Safe,
    ParseFail,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrictPrediction {
    prediction: Label,
}

/// Accepts exactly one JSON object with the single key `prediction` whose
/// value is `"hateful"` or `"safe"`. Surrounding whitespace is allowed;
/// anything else is [`Prediction::ParseFail`].
pub fn parse_prediction(raw: &str) -> Prediction {
    let raw = raw.trim();
    // Derived struct deserialization would also accept a one-element array.
    if !raw.starts_with('{') {
        return Prediction::ParseFail;
    }
    match serde_json::from_str::<StrictPrediction>(raw) {
        Ok(StrictPrediction { prediction: Label::Hateful }) => Prediction::Hateful,
        Ok(StrictPrediction { prediction: Label::Safe }) => Prediction::Safe,
        Err(_) => Prediction::ParseFail,
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRow {
    pub family_id: String,
    pub tier: Tier,
    pub model_id: String,
    pub raw_response: String,
    #[serde(default = "hate", skip_serializing_if = "is_hate")]
    pub ground_truth: BinaryLabel,
}

fn hate() -> BinaryLabel {
    BinaryLabel::Hate
}

fn is_hate(l: &BinaryLabel) -> bool {
    *l == BinaryLabel::Hate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub family_id: String,
    pub tier: Tier,
    pub model_id: String,
    pub prediction: Prediction,
    pub ground_truth: BinaryLabel,
}

impl From<&PredictionRow> for EvalRecord {
    fn from(r: &PredictionRow) -> Self {
        Self {
            family_id: r.family_id.clone(),
            tier: r.tier,
            model_id: r.model_id.clone(),
            prediction: parse_prediction(&r.raw_response),
            ground_truth: r.ground_truth,
        }
    }
}

/// Counts behind one HSR value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HsrCell {
    pub hits: usize,
    pub parse_fail: usize,
    pub total: usize,
    pub hsr: f64,
}

fn cell(records: &[&EvalRecord]) -> Result<HsrCell, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = records.iter().filter(|r| r.prediction == Prediction::Hateful).count();
    let parse_fail = records.iter().filter(|r| r.prediction == Prediction::ParseFail).count();
    let total = records.len();
    Ok(HsrCell { hits, parse_fail, total, hsr: 100.0 * hits as f64 / total as f64 })
}

/// Percentage of hate-labeled records predicted hateful. Unparseable
/// responses stay in the denominator as misses.
pub fn hsr(records: &[EvalRecord]) -> Result<f64, EvalError> {
    let first = records.first().ok_or(EvalError::EmptyInput)?;
    if records.iter().any(|r| r.tier != first.tier) {
        return Err(EvalError::Mixed("tiers"));
    }
    if records.iter().any(|r| r.model_id != first.model_id) {
        return Err(EvalError::Mixed("models"));
    }
    if records.iter().any(|r| r.ground_truth != BinaryLabel::Hate) {
        return Err(EvalError::Mixed("ground-truth labels"));
    }
    Ok(cell(&records.iter().collect::<Vec<_>>())?.hsr)
}

/// Soft minus hard.
pub fn tier_delta(hard_hsr: f64, soft_hsr: f64) -> f64 {
    soft_hsr - hard_hsr
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBreakdown {
    pub per_domain: BTreeMap<String, HsrCell>,
    /// Unweighted mean of the per-domain HSR values.
    pub all: f64,
}

/// HSR per group (domain or subgroup) and their unweighted mean. Records
/// should share tier and model.
pub fn domain_breakdown(records: &[EvalRecord], group_of: &HashMap<String, String>) -> Result<DomainBreakdown, EvalError> {
    let mut groups: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let g = group_of.get(&r.family_id).ok_or_else(|| EvalError::UnknownFamily(r.family_id.clone()))?;
        groups.entry(g.clone()).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let per_domain = groups
        .into_iter()
        .map(|(g, rs)| Ok((g, cell(&rs)?)))
        .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
    let all = mean(&per_domain.values().map(|c| c.hsr).collect::<Vec<_>>());
    Ok(DomainBreakdown { per_domain, all })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n: usize,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

/// Accuracy and macro-F1 (percentages) over hate and non-hate records.
/// An unparseable response is wrong for either class.
pub fn accuracy_f1(records: &[EvalRecord]) -> Result<Classification, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut m: HashMap<(BinaryLabel, Prediction), usize> = HashMap::new();
    for r in records {
        *m.entry((r.ground_truth, r.prediction)).or_default() += 1;
    }
    let g = |t, p| m.get(&(t, p)).copied().unwrap_or(0);
    use BinaryLabel::*;
    use Prediction::*;
    let tp_h = g(Hate, Hateful);
    let tp_s = g(NonHate, Safe);
    let f1_h = f1(tp_h, g(NonHate, Hateful), g(Hate, Safe) + g(Hate, ParseFail));
    let f1_s = f1(tp_s, g(Hate, Safe), g(NonHate, Hateful) + g(NonHate, ParseFail));
    Ok(Classification {
        accuracy: 100.0 * (tp_h + tp_s) as f64 / records.len() as f64,
        macro_f1: 100.0 * (f1_h + f1_s) / 2.0,
        n: records.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaffoldMode {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "ED_P")]
    EdP,
    #[serde(rename = "ED_P_M")]
    EdPM,
}

impl ScaffoldMode {
    pub const ALL: [ScaffoldMode; 3] = [ScaffoldMode::Ed, ScaffoldMode::EdP, ScaffoldMode::EdPM];

    pub fn as_str(self) -> &'static str {
        match self {
            ScaffoldMode::Ed => "ED",
            ScaffoldMode::EdP => "ED_P",
            ScaffoldMode::EdPM => "ED_P_M",
        }
    }
}

impl std::str::FromStr for ScaffoldMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown scaffold mode `{s}`"))
    }
}

/// Moderation prompt followed by labeled input sections.
pub fn moderation_prompt(prompts: &PromptSet, text: &str, premise: Option<&str>, maxim: Option<&str>) -> Result<String, EvalError> {
    let mut out = prompts.template(prompts::MODERATION)?.to_string();
    out.push_str("\n\n");
    out.push_str(&prompts.render(prompts::SCAFFOLD_INPUT, &[("text", text)])?);
    if let Some(p) = premise {
        out.push_str("\n\n");
        out.push_str(&prompts.render(prompts::SCAFFOLD_PREMISE, &[("premise", p)])?);
    }
    if let Some(m) = maxim {
        out.push_str("\n\n");
        out.push_str(&prompts.render(prompts::SCAFFOLD_MAXIM, &[("maxim", m)])?);
    }
    Ok(out)
}

/// Prompt showing E and D, plus P (and M) for the richer scaffolds.
pub fn scaffold_prompt(instance: &AmtInstance, mode: ScaffoldMode, prompts: &PromptSet) -> Result<String, EvalError> {
    let premise = (mode != ScaffoldMode::Ed).then_some(instance.premise.as_str());
    let maxim = (mode == ScaffoldMode::EdPM).then_some(instance.maxim.as_str());
    moderation_prompt(prompts, &instance.surface_text(), premise, maxim)
}

/// Queries the generator with the moderation prompt for every family and
/// tier. With a scaffold mode, tiers backed by an instance also show its
/// latent premise (and maxim).
pub fn run_moderation(
    families: &[TierFamily],
    tiers: &[Tier],
    scaffold: Option<ScaffoldMode>,
    backends: &BackendSet,
    prompts: &PromptSet,
    max_tokens: usize,
) -> Result<Vec<PredictionRow>, EvalError> {
    let model_id = backends.generator.id();
    let jobs: Vec<(&TierFamily, Tier)> = families.iter().flat_map(|f| tiers.iter().map(move |t| (f, *t))).collect();
    jobs.par_iter()
        .map(|(f, tier)| {
            let text = f.tier_text(*tier);
            let inst = f.tier_instance(*tier);
            let prompt = match (scaffold, inst) {
                (Some(mode), Some(i)) => {
                    let premise = (mode != ScaffoldMode::Ed).then_some(i.premise.as_str());
                    let maxim = (mode == ScaffoldMode::EdPM).then_some(i.maxim.as_str());
                    moderation_prompt(prompts, &text, premise, maxim)?
                }
                _ => moderation_prompt(prompts, &text, None, None)?,
            };
            let req = GenRequest::new(prompt, 1)
                .with_settings(0.0, max_tokens)
                .with_hints(GenHints { task: GenTask::Moderation, target: None, options: Vec::new() });
            let raw_response = match backends.generate(&req)?.pop() {
                Some(Candidate::Text(t)) | Some(Candidate::Refused(t)) => t,
                None => String::new(),
            };
            Ok(PredictionRow {
                family_id: f.family_id.clone(),
                tier: *tier,
                model_id: model_id.clone(),
                raw_response,
                ground_truth: BinaryLabel::Hate,
            })
        })
        .collect()
}

/// Named group of models whose rows are averaged together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCluster {
    pub name: String,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_id: String,
    pub cells: BTreeMap<Tier, HsrCell>,
    /// Soft tier minus hard, per soft tier.
    pub deltas: BTreeMap<Tier, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub name: String,
    pub models: Vec<String>,
    pub hsr: BTreeMap<Tier, f64>,
    pub deltas: BTreeMap<Tier, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub model_id: String,
    pub tier: Tier,
    pub breakdown: DomainBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tiers: Vec<Tier>,
    pub models: Vec<ModelRow>,
    pub clusters: Vec<AverageRow>,
    pub overall: Option<AverageRow>,
    pub domains: Vec<GroupRow>,
    pub subgroups: Vec<GroupRow>,
    pub classification: BTreeMap<String, Classification>,
}

fn deltas(hsr: &BTreeMap<Tier, f64>) -> BTreeMap<Tier, f64> {
    let Some(hard) = hsr.get(&Tier::Hard) else { return BTreeMap::new() };
    hsr.iter().filter(|(t, _)| **t != Tier::Hard).map(|(t, v)| (*t, tier_delta(*hard, *v))).collect()
}

fn average_row(name: &str, rows: &[&ModelRow]) -> Option<AverageRow> {
    if rows.is_empty() {
        return None;
    }
    let tiers: BTreeSet<Tier> = rows.iter().flat_map(|r| r.cells.keys().copied()).collect();
    let hsr: BTreeMap<Tier, f64> = tiers
        .into_iter()
        .filter(|t| rows.iter().all(|r| r.cells.contains_key(t)))
        .map(|t| (t, mean(&rows.iter().map(|r| r.cells[&t].hsr).collect::<Vec<_>>())))
        .collect();
    Some(AverageRow {
        name: name.to_string(),
        models: rows.iter().map(|r| r.model_id.clone()).collect(),
        deltas: deltas(&hsr),
        hsr,
    })
}

/// Family metadata used for breakdowns: family id to level-1 and level-2
/// labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FamilyIndex {
    pub level1: HashMap<String, String>,
    pub level2: HashMap<String, String>,
}

impl FamilyIndex {
    pub fn from_families(families: &[TierFamily]) -> Self {
        let mut ix = Self::default();
        for f in families {
            ix.level1.insert(f.family_id.clone(), f.base.target_group.level1.clone());
            ix.level2.insert(f.family_id.clone(), f.base.target_group.level2.clone());
        }
        ix
    }
}

/// Builds the full report. Hate-labeled records feed the HSR tables;
/// models with non-hate records also get accuracy and macro-F1 over all
/// their records. Cluster rows average their listed models that are
/// present; the overall row averages every model.
pub fn build_report(records: &[EvalRecord], clusters: &[ModelCluster], families: Option<&FamilyIndex>) -> Result<Report, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut by_cell: BTreeMap<(String, Tier), Vec<&EvalRecord>> = BTreeMap::new();
    let mut by_model: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        by_model.entry(r.model_id.clone()).or_default().push(r.clone());
        if r.ground_truth == BinaryLabel::Hate {
            by_cell.entry((r.model_id.clone(), r.tier)).or_default().push(r);
        }
    }
    let tiers: Vec<Tier> = by_cell.keys().map(|(_, t)| *t).collect::<BTreeSet<_>>().into_iter().collect();
    let mut models: BTreeMap<String, ModelRow> = BTreeMap::new();
    for ((m, t), rs) in &by_cell {
        let row = models.entry(m.clone()).or_insert_with(|| ModelRow {
            model_id: m.clone(),
            cells: BTreeMap::new(),
            deltas: BTreeMap::new(),
        });
        row.cells.insert(*t, cell(rs)?);
    }
    for row in models.values_mut() {
        let hsr: BTreeMap<Tier, f64> = row.cells.iter().map(|(t, c)| (*t, c.hsr)).collect();
        row.deltas = deltas(&hsr);
    }
    let cluster_rows = clusters
        .iter()
        .filter_map(|c| {
            let rows: Vec<&ModelRow> = c.models.iter().filter_map(|m| models.get(m)).collect();
            average_row(&c.name, &rows)
        })
        .collect();
    let all_rows: Vec<&ModelRow> = models.values().collect();
    let overall = average_row("Overall Average", &all_rows);

    let mut domains = Vec::new();
    let mut subgroups = Vec::new();
    if let Some(ix) = families {
        for ((m, t), rs) in &by_cell {
            let owned: Vec<EvalRecord> = rs.iter().map(|r| (*r).clone()).collect();
            domains.push(GroupRow { model_id: m.clone(), tier: *t, breakdown: domain_breakdown(&owned, &ix.level1)? });
            subgroups.push(GroupRow { model_id: m.clone(), tier: *t, breakdown: domain_breakdown(&owned, &ix.level2)? });
        }
    }
    let classification = by_model
        .into_iter()
        .filter(|(_, rs)| rs.iter().any(|r| r.ground_truth == BinaryLabel::NonHate))
        .map(|(m, rs)| Ok((m, accuracy_f1(&rs)?)))
        .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
    Ok(Report {
        tiers,
        models: models.into_values().collect(),
        clusters: cluster_rows,
        overall,
        domains,
        subgroups,
        classification,
    })
}

fn fmt1(v: Option<&f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

impl Report {
    /// Model by tier matrix: HSR per tier followed by deltas, then the
    /// cluster rows and the overall row.
    pub fn tier_csv(&self) -> String {
        let soft: Vec<Tier> = self.tiers.iter().copied().filter(|t| *t != Tier::Hard).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.tiers.iter().map(|t| t.as_str().to_string()));
        header.extend(soft.iter().map(|t| format!("delta_{t}")));
        header.push("parse_fail".into());
        w.write_record(&header).unwrap();
        for m in &self.models {
            let mut rec = vec![m.model_id.clone()];
            rec.extend(self.tiers.iter().map(|t| fmt1(m.cells.get(t).map(|c| &c.hsr))));
            rec.extend(soft.iter().map(|t| fmt1(m.deltas.get(t))));
            rec.push(m.cells.values().map(|c| c.parse_fail).sum::<usize>().to_string());
            w.write_record(&rec).unwrap();
        }
        for a in self.clusters.iter().chain(self.overall.iter()) {
            let mut rec = vec![a.name.clone()];
            rec.extend(self.tiers.iter().map(|t| fmt1(a.hsr.get(t))));
            rec.extend(soft.iter().map(|t| fmt1(a.deltas.get(t))));
            rec.push(String::new());
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Long format `model,tier,group,hits,total,hsr` with an `All` row per
    /// (model, tier).
    pub fn group_csv(rows: &[GroupRow]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "tier", "group", "hits", "total", "hsr"]).unwrap();
        for r in rows {
            for (g, c) in &r.breakdown.per_domain {
                w.write_record([&r.model_id, r.tier.as_str(), g, &c.hits.to_string(), &c.total.to_string(), &format!("{:.2}", c.hsr)])
                    .unwrap();
            }
            w.write_record([&r.model_id, r.tier.as_str(), "All", "", "", &format!("{:.2}", r.breakdown.all)]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Radar-chart data: one row per (model, tier), one column per domain.
    pub fn radar_csv(&self) -> String {
        let groups: BTreeSet<&String> = self.domains.iter().flat_map(|r| r.breakdown.per_domain.keys()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_string(), "tier".to_string()];
        header.extend(groups.iter().map(|g| g.to_string()));
        w.write_record(&header).unwrap();
        for r in &self.domains {
            let mut rec = vec![r.model_id.clone(), r.tier.as_str().to_string()];
            rec.extend(groups.iter().map(|g| fmt1(r.breakdown.per_domain.get(*g).map(|c| &c.hsr))));
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}
