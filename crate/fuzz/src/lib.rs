//! Harness bodies shared by the libFuzzer targets and the corpus replay test.
//! Each takes raw bytes, must not panic, and asserts the invariants its
//! entry point promises.

use std::collections::BTreeMap;

use amtgen::backends::remote::{decode_body, EmbedResp, ScoresResp};
use amtgen::backends::{check_scores, GenResponse, LmStats, NliScores};
use amtgen::config::RunConfig;
use amtgen::domain::{AmtInstance, LocusPool, TierFamily};
use amtgen::eval::{parse_prediction, Prediction, PredictionRow};
use amtgen::io::parse_jsonl;
use amtgen::parse;
use amtgen::pipeline::adapters::{AdapterCounts, SourceConfig, SourceFormat};
use amtgen::pipeline::curate::clean_text;
use amtgen::pipeline::{BinaryLabel, SeedRecord};
use amtgen::taxonomy::Taxonomy;

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn prediction(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let p = parse_prediction(s);
    if p != Prediction::ParseFail {
        assert!(s.trim().starts_with('{'));
        assert!(s.contains("prediction"));
    }
    // Padding never changes the verdict.
    assert_eq!(parse_prediction(&format!("  {s}\n")), p);
}

pub fn labeled_output(data: &[u8]) {
    let Some(s) = text(data) else { return };
    for (a, b) in [
        parse::parse_premise_maxim(s),
        parse::parse_endoxon_datum(s),
        parse::parse_extraction(s),
    ]
    .into_iter()
    .flatten()
    {
        assert!(!a.trim().is_empty() && !b.trim().is_empty());
    }
    for one in [parse::parse_single_answer(s), parse::parse_final_answer(s)].into_iter().flatten() {
        assert!(!one.trim().is_empty());
    }
    if let Some(v) = parse::labeled_field(s, "Premise") {
        assert!(s.to_lowercase().contains("premise"));
        assert!(!v.contains('\n'));
    }
}

pub fn jsonl_records(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(rows) = parse_jsonl::<SeedRecord>(s, "fuzz") {
        assert!(rows.len() <= s.lines().count());
    }
    if let Ok(rows) = parse_jsonl::<PredictionRow>(s, "fuzz") {
        assert!(rows.len() <= s.lines().count());
    }
    if let Ok(rows) = parse_jsonl::<AmtInstance>(s, "fuzz") {
        for r in &rows {
            let _ = r.validate(&LocusPool::default(), None);
            let _ = r.recompute_chain_score(None);
        }
    }
    let _ = parse_jsonl::<TierFamily>(s, "fuzz");
}

pub fn wire_response(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(n) = decode_body::<NliScores>(s) {
        if n.validate().is_ok() {
            assert!(n.p_ent.is_finite() && n.p_contr.is_finite() && n.p_neu.is_finite());
            let _ = n.label();
        }
    }
    if let Ok(lm) = decode_body::<LmStats>(s) {
        if lm.validate().is_ok() {
            assert!(lm.nll >= 0.0 && lm.entropy >= 0.0);
        }
    }
    let _ = decode_body::<EmbedResp>(s);
    if let Ok(r) = decode_body::<ScoresResp>(s) {
        if let Ok(v) = check_scores(r.scores) {
            assert!(!v.is_empty() && v.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
    let _ = decode_body::<GenResponse>(s);
}

pub fn clean(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let out = clean_text(s);
    assert_eq!(out, out.split_whitespace().collect::<Vec<_>>().join(" "));
    assert!(!out.contains("http://") && !out.contains("https://"), "{s:?} -> {out:?}");
}

pub fn config(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let _ = RunConfig::parse(s);
    if let Ok(t) = Taxonomy::from_toml(s) {
        assert!(Taxonomy::from_toml(s).is_ok_and(|u| u == t));
    }
    if let Ok(p) = LocusPool::from_toml(s) {
        assert!(!p.as_slice().is_empty());
    }
}

fn adapter(format: SourceFormat) -> SourceConfig {
    SourceConfig {
        name: "fz".into(),
        path: "unused".into(),
        format,
        text_field: "text".into(),
        label_field: "label".into(),
        label_map: BTreeMap::from([("1".into(), BinaryLabel::Hate), ("0".into(), BinaryLabel::NonHate)]),
        id_field: None,
        target_field: Some("target".into()),
        language_field: Some("lang".into()),
        languages: vec!["en".into()],
    }
}

/// First byte picks the format; the rest is the file body.
pub fn source_adapter(data: &[u8]) {
    let Some((&sel, rest)) = data.split_first() else { return };
    let Some(s) = text(rest) else { return };
    let (cfg, format) = if sel % 2 == 0 {
        (adapter(SourceFormat::Jsonl), SourceFormat::Jsonl)
    } else {
        (adapter(SourceFormat::Csv), SourceFormat::Csv)
    };
    let mut counts = AdapterCounts::default();
    let got = match format {
        SourceFormat::Jsonl => cfg.parse_jsonl(s, &mut counts),
        SourceFormat::Csv => cfg.parse_csv(s, &mut counts),
    };
    if let Ok(recs) = got {
        assert_eq!(counts.kept, recs.len());
        assert_eq!(counts.rows, counts.kept + counts.unmapped_label + counts.language_filtered + counts.empty_text);
        assert!(recs.iter().all(|r| r.source_id.starts_with("fz:") && !r.raw_text.trim().is_empty()));
    }
}
