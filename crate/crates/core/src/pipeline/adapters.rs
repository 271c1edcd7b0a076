//! Source corpus adapters: read an operator-supplied JSONL or CSV file,
//! map its label schema to hate / non-hate and apply a language gate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BinaryLabel, PipelineError, SeedRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub path: PathBuf,
    pub format: SourceFormat,
    pub text_field: String,
    pub label_field: String,
    /// Source label (stringified) to binary label; unmapped labels are dropped.
    pub label_map: BTreeMap<String, BinaryLabel>,
    #[serde(default)]
    pub id_field: Option<String>,
    #[serde(default)]
    pub target_field: Option<String>,
    #[serde(default)]
    pub language_field: Option<String>,
    /// Accepted language codes; empty accepts everything.
    #[serde(default)]
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCounts {
    pub rows: usize,
    pub unmapped_label: usize,
    pub language_filtered: usize,
    pub empty_text: usize,
    pub kept: usize,
}

fn field_string(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        other => Some(other.to_string()),
    }
}

impl SourceConfig {
    fn err(&self, msg: impl Into<String>) -> PipelineError {
        PipelineError::Adapter { source_name: self.name.clone(), msg: msg.into() }
    }

    /// Converts one row (field name to value) into a record, or `None` when
    /// the row is filtered out.
    pub fn map_row(
        &self,
        row_no: usize,
        get: &dyn Fn(&str) -> Option<String>,
        counts: &mut AdapterCounts,
    ) -> Result<Option<SeedRecord>, PipelineError> {
        counts.rows += 1;
        let label = get(&self.label_field).ok_or_else(|| self.err(format!("row {row_no}: missing `{}`", self.label_field)))?;
        let Some(binary) = self.label_map.get(label.trim()).copied() else {
            counts.unmapped_label += 1;
            return Ok(None);
        };
        if let Some(lf) = &self.language_field {
            if !self.languages.is_empty() {
                let lang = get(lf).unwrap_or_default();
                if !self.languages.iter().any(|l| l.eq_ignore_ascii_case(lang.trim())) {
                    counts.language_filtered += 1;
                    return Ok(None);
                }
            }
        }
        let text = get(&self.text_field).unwrap_or_default();
        if text.trim().is_empty() {
            counts.empty_text += 1;
            return Ok(None);
        }
        let id = match &self.id_field {
            Some(f) => get(f).ok_or_else(|| self.err(format!("row {row_no}: missing `{f}`")))?,
            None => format!("{row_no:08}"),
        };
        let mut rec = SeedRecord::new(format!("{}:{id}", self.name), text, binary);
        rec.target_phrase = self.target_field.as_ref().and_then(|f| get(f)).filter(|t| !t.trim().is_empty());
        counts.kept += 1;
        Ok(Some(rec))
    }

    pub fn parse_jsonl(&self, text: &str, counts: &mut AdapterCounts) -> Result<Vec<SeedRecord>, PipelineError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(line).map_err(|e| self.err(format!("line {}: {e}", i + 1)))?;
            let obj = v.as_object().ok_or_else(|| self.err(format!("line {}: not an object", i + 1)))?;
            let get = |k: &str| obj.get(k).and_then(field_string);
            if let Some(r) = self.map_row(i + 1, &get, counts)? {
                out.push(r);
            }
        }
        Ok(out)
    }

    pub fn parse_csv(&self, text: &str, counts: &mut AdapterCounts) -> Result<Vec<SeedRecord>, PipelineError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| self.err(e.to_string()))?.clone();
        let mut out = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| self.err(format!("row {}: {e}", i + 1)))?;
            let get = |k: &str| headers.iter().position(|h| h == k).and_then(|p| row.get(p)).map(str::to_string);
            if let Some(r) = self.map_row(i + 1, &get, counts)? {
                out.push(r);
            }
        }
        Ok(out)
    }

    pub fn load(&self, base: &Path) -> Result<(Vec<SeedRecord>, AdapterCounts), PipelineError> {
        let path = if self.path.is_absolute() { self.path.clone() } else { base.join(&self.path) };
        let text = std::fs::read_to_string(&path).map_err(|e| self.err(format!("{}: {e}", path.display())))?;
        let mut counts = AdapterCounts::default();
        let recs = match self.format {
            SourceFormat::Jsonl => self.parse_jsonl(&text, &mut counts)?,
            SourceFormat::Csv => self.parse_csv(&text, &mut counts)?,
        };
        Ok((recs, counts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(format: SourceFormat) -> SourceConfig {
        SourceConfig {
            name: "src".into(),
            path: "x".into(),
            format,
            text_field: "text".into(),
            label_field: "label".into(),
            label_map: [("hateful".to_string(), BinaryLabel::Hate), ("0".to_string(), BinaryLabel::NonHate)].into(),
            id_field: Some("id".into()),
            target_field: Some("target".into()),
            language_field: Some("lang".into()),
            languages: vec!["en".into()],
        }
    }

    #[test]
    fn jsonl_mapping_and_gates() {
        let text = r#"{"id":1,"text":"a b c","label":"hateful","target":"Women","lang":"en"}
{"id":2,"text":"x","label":"offensive","lang":"en"}
{"id":3,"text":"y","label":0,"lang":"hi"}
{"id":4,"text":"z","label":0,"lang":"EN"}
"#;
        let mut c = AdapterCounts::default();
        let recs = cfg(SourceFormat::Jsonl).parse_jsonl(text, &mut c).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].source_id, "src:1");
        assert_eq!(recs[0].target_phrase.as_deref(), Some("Women"));
        assert_eq!(recs[1].binary_label, BinaryLabel::NonHate);
        assert_eq!(c, AdapterCounts { rows: 4, unmapped_label: 1, language_filtered: 1, empty_text: 0, kept: 2 });
    }

    #[test]
    fn csv_mapping() {
        let text = "id,text,label,target,lang\n7,\"hello, world\",hateful,,en\n";
        let mut c = AdapterCounts::default();
        let recs = cfg(SourceFormat::Csv).parse_csv(text, &mut c).unwrap();
        assert_eq!(recs[0].raw_text, "hello, world");
        assert_eq!(recs[0].target_phrase, None);
    }

    #[test]
    fn bad_json_reports_line() {
        let err = cfg(SourceFormat::Jsonl).parse_jsonl("\n{", &mut AdapterCounts::default()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
