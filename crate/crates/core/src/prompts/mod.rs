//! Prompt texts: base extraction prompts, prompt additions, and the structuring,
//! matching and verification helper prompts.
//!
//! Texts live in plain-text template files (one per template id) so they can be edited
//! without recompiling. The built-in set is compiled from `prompts/` in this crate;
//! [`PromptSet::load_dir`] overlays any `<template_id>.txt` found in a directory.
//!
//! An extraction prompt is composed as
//! `[role] [context] base-prompt-with-article [chain-of-thought]`, separated by blank
//! lines, so the rendered base prompt is always a substring of every variant.

mod template;
mod variant;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::{Article, EntityClass};

pub use template::PromptTemplate;
pub use variant::{
    enumerate_variants, max_addition_id, PromptVariant, CHAIN_OF_THOUGHT_ID, CONTEXT_ID, ROLE_IDS,
};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template '{template_id}' has no binding for {{{placeholder}}}")]
    Unbound {
        template_id: String,
        placeholder: String,
    },
    #[error("unknown prompt addition {id}) for class {entity_class}")]
    UnknownAddition { id: u8, entity_class: EntityClass },
    #[error("prompt additions {0:?} are all roles; at most one role is allowed")]
    RoleConflict(Vec<u8>),
    #[error("cannot parse prompt-addition label '{0}'")]
    BadLabel(String),
    #[error("missing prompt template '{0}'")]
    MissingTemplate(String),
    #[error("template '{template_id}' must contain {{{placeholder}}}")]
    MissingPlaceholder {
        template_id: String,
        placeholder: &'static str,
    },
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("cannot read prompt directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

const BUILTIN: &[(&str, &str)] = &[
    (
        "extraction_individual",
        include_str!("../../prompts/extraction_individual.txt"),
    ),
    (
        "extraction_organization",
        include_str!("../../prompts/extraction_organization.txt"),
    ),
    (
        "role_individual_1",
        include_str!("../../prompts/role_individual_1.txt"),
    ),
    (
        "role_individual_2",
        include_str!("../../prompts/role_individual_2.txt"),
    ),
    (
        "role_individual_3",
        include_str!("../../prompts/role_individual_3.txt"),
    ),
    (
        "role_organization_1",
        include_str!("../../prompts/role_organization_1.txt"),
    ),
    (
        "role_organization_2",
        include_str!("../../prompts/role_organization_2.txt"),
    ),
    (
        "role_organization_3",
        include_str!("../../prompts/role_organization_3.txt"),
    ),
    (
        "chain_of_thought",
        include_str!("../../prompts/chain_of_thought.txt"),
    ),
    (
        "context_organization",
        include_str!("../../prompts/context_organization.txt"),
    ),
    ("structuring", include_str!("../../prompts/structuring.txt")),
    ("matching", include_str!("../../prompts/matching.txt")),
    (
        "verification",
        include_str!("../../prompts/verification.txt"),
    ),
];

const REQUIRED_PLACEHOLDERS: &[(&str, &[&str])] = &[
    ("extraction_individual", &["article"]),
    ("extraction_organization", &["article"]),
    ("structuring", &["raw_response"]),
    ("matching", &["gold_list", "llm_list"]),
    ("verification", &["article", "entry"]),
];

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

fn extraction_id(class: EntityClass) -> &'static str {
    match class {
        EntityClass::Individual => "extraction_individual",
        EntityClass::Organization => "extraction_organization",
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, text)| (id.to_string(), PromptTemplate::new(*id, text.trim_end())))
            .collect();
        Self { templates }
    }

    /// Built-in templates overlaid with every `<template_id>.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        let io = |source| PromptError::Io {
            path: dir.to_path_buf(),
            source,
        };
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.clone(),
                source,
            })?;
            set.insert(PromptTemplate::new(id, text.trim_end()));
        }
        set.check()?;
        Ok(set)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates
            .insert(template.template_id.clone(), template);
    }

    pub fn get(&self, template_id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(template_id)
            .ok_or_else(|| PromptError::MissingTemplate(template_id.to_string()))
    }

    /// Verifies that the templates the pipeline renders exist and carry their
    /// mandatory placeholders.
    pub fn check(&self) -> Result<(), PromptError> {
        for (id, required) in REQUIRED_PLACEHOLDERS {
            let template = self.get(id)?;
            let present = template.placeholders();
            if let Some(missing) = required.iter().find(|p| !present.contains(*p)) {
                return Err(PromptError::MissingPlaceholder {
                    template_id: id.to_string(),
                    placeholder: missing,
                });
            }
        }
        Ok(())
    }

    fn addition_text(&self, class: EntityClass, id: u8) -> Result<&str, PromptError> {
        let template_id = match id {
            1..=3 => format!("role_{}_{id}", class.as_str()),
            CHAIN_OF_THOUGHT_ID => "chain_of_thought".to_string(),
            CONTEXT_ID if class == EntityClass::Organization => "context_organization".to_string(),
            _ => {
                return Err(PromptError::UnknownAddition {
                    id,
                    entity_class: class,
                })
            }
        };
        Ok(self.get(&template_id)?.text.as_str())
    }

    /// The base prompt for a class with the article bound, without any additions.
    pub fn render_base_prompt(
        &self,
        article: &Article,
        class: EntityClass,
    ) -> Result<String, PromptError> {
        self.get(extraction_id(class))?
            .render(&[("article", &article.body)])
    }

    pub fn render_extraction_prompt(
        &self,
        article: &Article,
        variant: &PromptVariant,
    ) -> Result<String, PromptError> {
        let class = variant.entity_class();
        let mut parts: Vec<String> = Vec::with_capacity(4);
        if let Some(role) = variant.role() {
            parts.push(self.addition_text(class, role)?.to_string());
        }
        if variant.has(CONTEXT_ID) {
            parts.push(self.addition_text(class, CONTEXT_ID)?.to_string());
        }
        parts.push(self.render_base_prompt(article, class)?);
        if variant.has(CHAIN_OF_THOUGHT_ID) {
            parts.push(self.addition_text(class, CHAIN_OF_THOUGHT_ID)?.to_string());
        }
        Ok(parts.join("\n\n"))
    }

    pub fn render_structuring_prompt(
        &self,
        raw_response: &str,
        class: EntityClass,
    ) -> Result<String, PromptError> {
        if raw_response.trim().is_empty() {
            return Err(PromptError::EmptyInput("raw response"));
        }
        self.get("structuring")?.render(&[
            ("raw_response", raw_response),
            ("entity_key", class.json_key()),
            ("entity_plural", class.json_key()),
        ])
    }

    pub fn render_matching_prompt<G, P>(
        &self,
        gold_list: &[G],
        llm_list: &[P],
    ) -> Result<String, PromptError>
    where
        G: AsRef<str>,
        P: AsRef<str>,
    {
        if gold_list.is_empty() {
            return Err(PromptError::EmptyInput("gold list"));
        }
        if llm_list.is_empty() {
            return Err(PromptError::EmptyInput("predicted list"));
        }
        self.get("matching")?.render(&[
            ("gold_list", &numbered(gold_list)),
            ("llm_list", &numbered(llm_list)),
        ])
    }

    pub fn render_verification_prompt(
        &self,
        article: &Article,
        class: EntityClass,
        entry: &str,
    ) -> Result<String, PromptError> {
        self.get("verification")?.render(&[
            ("article", &article.body),
            ("entry", entry),
            ("entity_label", class.as_str()),
            ("entity_article", "an"),
        ])
    }
}

fn numbered<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn article() -> Article {
        Article::new(
            "A1",
            "Prosecutors charged Ivan Petrov over bribes paid to Acme Ltd.",
        )
    }

    #[test]
    fn builtin_set_is_complete() {
        PromptSet::builtin().check().unwrap();
    }

    #[test]
    fn base_individual_prompt() {
        let set = PromptSet::builtin();
        let v = PromptVariant::base(EntityClass::Individual);
        let text = set.render_extraction_prompt(&article(), &v).unwrap();
        assert!(text.contains(&article().body));
        assert!(text.contains(r#"{"individuals": ["#));
        assert!(!text.contains("You are"));
        assert!(!text.contains("step by step"));
        assert_eq!(
            text,
            set.render_base_prompt(&article(), EntityClass::Individual)
                .unwrap()
        );
    }

    #[test]
    fn chain_of_thought_variant() {
        let set = PromptSet::builtin();
        let base = set
            .render_base_prompt(&article(), EntityClass::Individual)
            .unwrap();
        let v = PromptVariant::new(EntityClass::Individual, [4]).unwrap();
        let text = set.render_extraction_prompt(&article(), &v).unwrap();
        assert!(text.starts_with(&base));
        assert!(text.ends_with(set.get("chain_of_thought").unwrap().text.as_str()));
    }

    #[test]
    fn full_organization_variant() {
        let set = PromptSet::builtin();
        let v = PromptVariant::parse_label(EntityClass::Organization, "1),4),5)").unwrap();
        assert_eq!(v.label(), "1),4),5)");
        let text = set.render_extraction_prompt(&article(), &v).unwrap();
        let role = set.get("role_organization_1").unwrap().text.as_str();
        let ctx = set.get("context_organization").unwrap().text.as_str();
        let cot = set.get("chain_of_thought").unwrap().text.as_str();
        assert!(text.starts_with(role));
        let (r, c, k) = (text.find(role), text.find(ctx), text.find(cot));
        assert!(r < c && c < k);
        assert!(text.contains(r#"{"organizations": ["#));
    }

    #[test]
    fn structuring_prompt() {
        let set = PromptSet::builtin();
        let raw = "The people are John Smith and Mary Jones.";
        let text = set
            .render_structuring_prompt(raw, EntityClass::Individual)
            .unwrap();
        assert!(text.contains(raw));
        assert!(text.contains(r#"{"individuals": ["<name>""#));
        let already = r#"{"individuals":["A"]}"#;
        assert!(set
            .render_structuring_prompt(already, EntityClass::Individual)
            .is_ok());
        assert!(matches!(
            set.render_structuring_prompt("  ", EntityClass::Individual),
            Err(PromptError::EmptyInput(_))
        ));
    }

    #[test]
    fn matching_prompt() {
        let set = PromptSet::builtin();
        let text = set
            .render_matching_prompt(&["Federal Bureau of Investigations"], &["FBI"])
            .unwrap();
        assert!(text.contains("1. Federal Bureau of Investigations"));
        assert!(text.contains("1. FBI"));
        assert!(set.render_matching_prompt(&["A"], &["B"]).is_ok());
        let empty: [&str; 0] = [];
        assert!(set.render_matching_prompt(&empty, &["x"]).is_err());
    }

    #[test]
    fn directory_overlay() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("chain_of_thought.txt"),
            "Reason carefully.\n",
        )
        .unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(
            set.get("chain_of_thought").unwrap().text,
            "Reason carefully."
        );

        std::fs::write(dir.path().join("matching.txt"), "no lists here").unwrap();
        assert!(matches!(
            PromptSet::load_dir(dir.path()),
            Err(PromptError::MissingPlaceholder { .. })
        ));
    }

    proptest! {
        #[test]
        fn additions_only_add(
            body in "[A-Za-z .,{}]{1,80}",
            org: bool,
            role in proptest::option::of(1u8..=3),
            cot: bool,
            ctx: bool,
        ) {
            let class = if org { EntityClass::Organization } else { EntityClass::Individual };
            let mut ids: Vec<u8> = role.into_iter().collect();
            if cot { ids.push(4); }
            if ctx && org { ids.push(5); }
            let set = PromptSet::builtin();
            let a = Article::new("p", body);
            let v = PromptVariant::new(class, ids).unwrap();
            let base = set.render_base_prompt(&a, class).unwrap();
            let full = set.render_extraction_prompt(&a, &v).unwrap();
            prop_assert!(full.contains(&base));
            prop_assert_eq!(full.clone(), set.render_extraction_prompt(&a, &v).unwrap());
            if !v.additions().is_empty() {
                prop_assert!(full.len() > base.len());
            }
        }
    }
}
