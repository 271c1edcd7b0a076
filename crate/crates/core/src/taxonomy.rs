//! Two-level target taxonomy: broad domains holding disjoint subgroups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, TargetGroupRef, DEFAULT_PLACEHOLDER};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub subgroups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    #[serde(rename = "domain")]
    domains: Vec<DomainEntry>,
}

impl Taxonomy {
    pub fn new(domains: Vec<DomainEntry>) -> Result<Self, DomainError> {
        let t = Self { domains };
        t.validate()?;
        Ok(t)
    }

    pub fn from_toml(src: &str) -> Result<Self, DomainError> {
        let t: Taxonomy =
            toml::from_str(src).map_err(|e| DomainError::InvalidTaxonomy(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), DomainError> {
        if self.domains.is_empty() {
            return Err(DomainError::InvalidTaxonomy("no domains".into()));
        }
        let mut owner: BTreeMap<String, &str> = BTreeMap::new();
        for d in &self.domains {
            if d.name.trim().is_empty() {
                return Err(DomainError::InvalidTaxonomy("domain with empty name".into()));
            }
            if d.subgroups.is_empty() {
                return Err(DomainError::InvalidTaxonomy(format!("domain `{}` has no subgroups", d.name)));
            }
            for s in &d.subgroups {
                if let Some(prev) = owner.insert(s.to_lowercase(), &d.name) {
                    return Err(DomainError::InvalidTaxonomy(format!(
                        "subgroup `{s}` listed under both `{prev}` and `{}`",
                        d.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn domains(&self) -> &[DomainEntry] {
        &self.domains
    }

    pub fn level1_names(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(|d| d.name.as_str())
    }

    pub fn level2_names(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().flat_map(|d| d.subgroups.iter().map(String::as_str))
    }

    /// Case-insensitive lookup of a domain name, returning its canonical form.
    pub fn find_level1(&self, label: &str) -> Option<&str> {
        let label = label.trim();
        self.level1_names().find(|n| n.eq_ignore_ascii_case(label))
    }

    /// Case-insensitive lookup of a subgroup within one domain.
    pub fn find_level2(&self, level1: &str, label: &str) -> Option<&str> {
        let label = label.trim();
        self.domains
            .iter()
            .find(|d| d.name == level1)?
            .subgroups
            .iter()
            .find(|s| s.eq_ignore_ascii_case(label))
            .map(String::as_str)
    }

    pub fn subgroups_of(&self, level1: &str) -> Option<&[String]> {
        self.domains.iter().find(|d| d.name == level1).map(|d| d.subgroups.as_slice())
    }

    /// The unique domain owning a subgroup.
    pub fn level1_of(&self, level2: &str) -> Option<&str> {
        self.domains
            .iter()
            .find(|d| d.subgroups.iter().any(|s| s.eq_ignore_ascii_case(level2)))
            .map(|d| d.name.as_str())
    }

    pub fn target_ref(&self, level2: &str) -> Option<TargetGroupRef> {
        let level1 = self.level1_of(level2)?;
        let canonical = self.find_level2(level1, level2)?;
        Some(TargetGroupRef {
            level1: level1.to_string(),
            level2: canonical.to_string(),
            placeholder_token: DEFAULT_PLACEHOLDER.to_string(),
        })
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::from_toml(include_str!("../assets/taxonomy.toml")).expect("shipped taxonomy parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_seven_by_twenty_eight() {
        let t = Taxonomy::default();
        assert_eq!(t.level1_names().count(), 7);
        assert_eq!(t.level2_names().count(), 28);
        assert_eq!(t.level1_of("women"), Some("Gender"));
        assert_eq!(t.target_ref("muslim").unwrap().level2, "Muslim");
    }

    #[test]
    fn subgroup_in_two_domains_rejected() {
        let r = Taxonomy::new(vec![
            DomainEntry { name: "A".into(), subgroups: vec!["x".into()] },
            DomainEntry { name: "B".into(), subgroups: vec!["X".into()] },
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn lookups_are_case_insensitive() {
        let t = Taxonomy::default();
        assert_eq!(t.find_level1("gender"), Some("Gender"));
        assert_eq!(t.find_level2("Gender", " non-BINARY "), Some("Non-binary"));
        assert_eq!(t.find_level2("Gender", "Muslim"), None);
    }
}
