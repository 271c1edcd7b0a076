//! Parsers for labeled generator output such as
//!
//! ```text
//! Premise: ...
//! Maxim: ...
//! ```

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseFailure {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{0}` is empty")]
    EmptyField(String),
}

/// Strips list markers and markdown emphasis from the start of a line.
fn strip_decoration(line: &str) -> &str {
    line.trim_start()
        .trim_start_matches(['-', '*', '#', '>', ' ', '\t'])
        .trim_start()
}

/// Value after `label:` on the first line carrying that label
/// (case-insensitive label, emphasis around the label tolerated).
pub fn labeled_field(text: &str, label: &str) -> Option<String> {
    for line in text.lines() {
        let line = strip_decoration(line);
        let Some(head) = line.get(..label.len()) else { continue };
        if !head.eq_ignore_ascii_case(label) {
            continue;
        }
        let rest = line[label.len()..].trim_start_matches('*').trim_start();
        if let Some(value) = rest.strip_prefix(':') {
            return Some(value.trim().trim_matches('*').trim().to_string());
        }
    }
    None
}

/// All `labels` in order, each required and non-empty.
pub fn labeled_fields(text: &str, labels: &[&str]) -> Result<Vec<String>, ParseFailure> {
    labels
        .iter()
        .map(|l| match labeled_field(text, l) {
            None => Err(ParseFailure::MissingField(l.to_string())),
            Some(v) if v.is_empty() => Err(ParseFailure::EmptyField(l.to_string())),
            Some(v) => Ok(v),
        })
        .collect()
}

pub fn parse_premise_maxim(text: &str) -> Result<(String, String), ParseFailure> {
    let mut v = labeled_fields(text, &["Premise", "Maxim"])?;
    let m = v.pop().unwrap();
    Ok((v.pop().unwrap(), m))
}

pub fn parse_endoxon_datum(text: &str) -> Result<(String, String), ParseFailure> {
    let mut v = labeled_fields(text, &["Endoxon", "Datum"])?;
    let d = v.pop().unwrap();
    Ok((v.pop().unwrap(), d))
}

pub fn parse_extraction(text: &str) -> Result<(String, String), ParseFailure> {
    let mut v = labeled_fields(text, &["Standpoint", "Target"])?;
    let t = v.pop().unwrap();
    Ok((v.pop().unwrap(), t))
}

/// Single-line answer: first non-empty line, trimmed of quotes and a
/// trailing period.
pub fn parse_single_answer(text: &str) -> Result<String, ParseFailure> {
    let line = text
        .lines()
        .map(|l| strip_decoration(l).trim())
        .find(|l| !l.is_empty())
        .ok_or_else(|| ParseFailure::EmptyField("answer".into()))?;
    let quotes = |c: char| c == '"' || c == '\'' || c == '`';
    let line = line.trim_end_matches('.').trim_matches(quotes).trim_end_matches('.').trim();
    if line.is_empty() {
        return Err(ParseFailure::EmptyField("answer".into()));
    }
    Ok(line.to_string())
}

/// Text after the last `Final:` label, or the whole text when absent.
pub fn parse_final_answer(text: &str) -> Result<String, ParseFailure> {
    let value = text
        .lines()
        .rev()
        .find_map(|l| labeled_field(l, "Final"))
        .unwrap_or_else(|| text.trim().to_string());
    if value.is_empty() {
        return Err(ParseFailure::EmptyField("Final".into()));
    }
    Ok(value)
}
