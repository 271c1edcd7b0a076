//! Prompt templates. Defaults are compiled in from `assets/prompts`; a
//! directory override replaces any template whose file it contains.
//!
//! Templates use `{name}` placeholders. Rendering is single-pass, so values
//! may contain braces.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template `{template}` needs `{var}`")]
    MissingVar { template: String, var: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

pub const PREMISE_EXPANSION: &str = "premise_expansion";
pub const DECOMPOSITION: &str = "decomposition";
pub const EXTRACTION: &str = "extraction";
pub const LEVEL1: &str = "level1";
pub const LEVEL2: &str = "level2";
pub const REGENERATE_STANDPOINT: &str = "regenerate_standpoint";
pub const CODED_REFERENCE: &str = "coded_reference";
pub const HOSTILITY_POST: &str = "hostility_post";
pub const COUNTER_STANDPOINT: &str = "counter_standpoint";
pub const BASELINE_DIRECT: &str = "baseline_direct";
pub const BASELINE_PARAPHRASE: &str = "baseline_paraphrase";
pub const BASELINE_COT: &str = "baseline_cot";
pub const MODERATION: &str = "moderation";
pub const SCAFFOLD_INPUT: &str = "scaffold_input";
pub const SCAFFOLD_PREMISE: &str = "scaffold_premise";
pub const SCAFFOLD_MAXIM: &str = "scaffold_maxim";

const DEFAULTS: &[(&str, &str)] = &[
    (PREMISE_EXPANSION, include_str!("../assets/prompts/premise_expansion.txt")),
    (DECOMPOSITION, include_str!("../assets/prompts/decomposition.txt")),
    (EXTRACTION, include_str!("../assets/prompts/extraction.txt")),
    (LEVEL1, include_str!("../assets/prompts/level1.txt")),
    (LEVEL2, include_str!("../assets/prompts/level2.txt")),
    (REGENERATE_STANDPOINT, include_str!("../assets/prompts/regenerate_standpoint.txt")),
    (CODED_REFERENCE, include_str!("../assets/prompts/coded_reference.txt")),
    (HOSTILITY_POST, include_str!("../assets/prompts/hostility_post.txt")),
    (COUNTER_STANDPOINT, include_str!("../assets/prompts/counter_standpoint.txt")),
    (BASELINE_DIRECT, include_str!("../assets/prompts/baseline_direct.txt")),
    (BASELINE_PARAPHRASE, include_str!("../assets/prompts/baseline_paraphrase.txt")),
    (BASELINE_COT, include_str!("../assets/prompts/baseline_cot.txt")),
    (MODERATION, include_str!("../assets/prompts/moderation.txt")),
    (SCAFFOLD_INPUT, include_str!("../assets/prompts/scaffold_input.txt")),
    (SCAFFOLD_PREMISE, include_str!("../assets/prompts/scaffold_premise.txt")),
    (SCAFFOLD_MAXIM, include_str!("../assets/prompts/scaffold_maxim.txt")),
];

static VAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").unwrap());

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl PromptSet {
    /// Defaults overlaid with every `<name>.txt` in `dir` that matches a
    /// known template name.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for (name, _) in DEFAULTS {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
                set.templates.insert(name.to_string(), text);
            }
        }
        Ok(set)
    }

    pub fn template(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render(name, self.template(name)?, vars)
    }

    /// Hash over all templates, recorded in run manifests.
    pub fn fingerprint(&self) -> String {
        let parts: Vec<&str> = self.templates.iter().flat_map(|(k, v)| [k.as_str(), v.as_str()]).collect();
        crate::hashing::content_hash(&parts)
    }
}

pub fn render(name: &str, template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut missing = None;
    let out = VAR.replace_all(template, |c: &Captures| {
        let key = &c[1];
        match vars.iter().find(|(k, _)| *k == key) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.get_or_insert_with(|| key.to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(var) => Err(PromptError::MissingVar { template: name.to_string(), var }),
        None => Ok(out.into_owned()),
    }
}

/// Appends a re-sampling marker so a retried request differs from the
/// original prompt.
pub fn with_attempt(prompt: &str, attempt: usize) -> String {
    if attempt == 0 {
        prompt.to_string()
    } else {
        format!("{prompt}\n(attempt {})", attempt + 1)
    }
}
