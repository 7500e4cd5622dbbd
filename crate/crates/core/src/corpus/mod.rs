//! Benchmark data model: articles, gold entity lists and the dataset file format.
//!
//! A dataset file is one JSON document:
//!
//! ```json
//! {"articles":[{"id":"a01","title":null,"body":"...","case_label":null,"language":"en"}],
//!  "gold":[{"article_id":"a01","individuals":["..."],"organizations":[]}]}
//! ```
//!
//! [`load_dataset`] also accepts the layout of the published record through
//! [`zenodo`], selected automatically when the top-level document is not an object with
//! an `articles` key.

mod preprocess;
mod stats;
pub mod zenodo;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::dedup_key;

pub(crate) use preprocess::decode_whitespace_escapes;
pub use preprocess::preprocess_text;
pub use stats::{compute_stats, CorpusStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    Individual,
    Organization,
}

impl EntityClass {
    pub const ALL: [EntityClass; 2] = [EntityClass::Individual, EntityClass::Organization];

    /// Key of the entity list in model responses and gold records.
    pub fn json_key(self) -> &'static str {
        match self {
            EntityClass::Individual => "individuals",
            EntityClass::Organization => "organizations",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Individual => "individual",
            EntityClass::Organization => "organization",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "individual" | "individuals" | "person" | "persons" => Ok(EntityClass::Individual),
            "organization" | "organizations" | "organisation" | "organisations" | "org" => {
                Ok(EntityClass::Organization)
            }
            other => Err(format!("unknown entity class '{other}'")),
        }
    }
}

fn default_language() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub body: String,
    #[serde(default)]
    pub case_label: Option<String>,
    #[serde(default = "default_language")]
    pub language: String,
}

impl Article {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: None,
            body: body.into(),
            case_label: None,
            language: default_language(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub article_id: String,
    #[serde(default)]
    pub individuals: Vec<String>,
    #[serde(default)]
    pub organizations: Vec<String>,
}

impl GoldRecord {
    pub fn entities(&self, class: EntityClass) -> &[String] {
        match class {
            EntityClass::Individual => &self.individuals,
            EntityClass::Organization => &self.organizations,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub articles: Vec<Article>,
    pub gold: Vec<GoldRecord>,
}

/// Per-class gold totals and per-article ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GoldSummary {
    pub individuals: usize,
    pub organizations: usize,
    pub individuals_per_article: (usize, usize),
    pub organizations_per_article: (usize, usize),
}

impl Dataset {
    pub fn article(&self, id: &str) -> Option<&Article> {
        self.articles.iter().find(|a| a.id == id)
    }

    pub fn gold_for(&self, article_id: &str) -> Option<&GoldRecord> {
        self.gold.iter().find(|g| g.article_id == article_id)
    }

    /// Gold list for one article and class; an article without a gold record has none.
    pub fn gold_entities(&self, article_id: &str, class: EntityClass) -> &[String] {
        self.gold_for(article_id)
            .map(|g| g.entities(class))
            .unwrap_or(&[])
    }

    pub fn gold_summary(&self) -> GoldSummary {
        let range = |class: EntityClass| {
            let counts: Vec<usize> = self.gold.iter().map(|g| g.entities(class).len()).collect();
            (
                counts.iter().copied().min().unwrap_or(0),
                counts.iter().copied().max().unwrap_or(0),
            )
        };
        GoldSummary {
            individuals: self.gold.iter().map(|g| g.individuals.len()).sum(),
            organizations: self.gold.iter().map(|g| g.organizations.len()).sum(),
            individuals_per_article: range(EntityClass::Individual),
            organizations_per_article: range(EntityClass::Organization),
        }
    }

    /// Serializes to the dataset file format (pretty-printed, trailing newline).
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json_string()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Checks every type invariant, returning all violations found.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut issues = Vec::new();
        let mut ids = HashSet::new();
        for (i, article) in self.articles.iter().enumerate() {
            if article.id.trim().is_empty() {
                issues.push(IntegrityIssue::new(
                    format!("articles[{i}].id"),
                    "empty article id",
                ));
            } else if !ids.insert(article.id.as_str()) {
                issues.push(IntegrityIssue::new(
                    format!("articles[{i}].id"),
                    format!("duplicate article id \"{}\"", article.id),
                ));
            }
            if article.body.trim().is_empty() {
                issues.push(IntegrityIssue::new(
                    format!("articles[{i}].body"),
                    "empty body",
                ));
            }
            if article.body.chars().any(char::is_control) {
                issues.push(IntegrityIssue::new(
                    format!("articles[{i}].body"),
                    "raw control character in body",
                ));
            }
        }

        let mut gold_seen: HashMap<&str, usize> = HashMap::new();
        for (i, record) in self.gold.iter().enumerate() {
            if !ids.contains(record.article_id.as_str()) {
                issues.push(IntegrityIssue::new(
                    format!("gold[{i}].article_id"),
                    format!("unknown article id \"{}\"", record.article_id),
                ));
            }
            if let Some(prev) = gold_seen.insert(record.article_id.as_str(), i) {
                issues.push(IntegrityIssue::new(
                    format!("gold[{i}].article_id"),
                    format!(
                        "second gold record for article \"{}\" (first at gold[{prev}])",
                        record.article_id
                    ),
                ));
            }
            for class in EntityClass::ALL {
                let mut keys = HashSet::new();
                for (j, entry) in record.entities(class).iter().enumerate() {
                    let key = dedup_key(entry);
                    let location = format!("gold[{i}].{}[{j}]", class.json_key());
                    if key.is_empty() {
                        issues.push(IntegrityIssue::new(location, "empty entry"));
                    } else if !keys.insert(key) {
                        issues.push(IntegrityIssue::new(
                            location,
                            format!("duplicate entry \"{entry}\""),
                        ));
                    }
                }
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::Integrity(issues))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegrityIssue {
    pub location: String,
    pub message: String,
}

impl IntegrityIssue {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for IntegrityIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dataset integrity: {}", join_issues(.0))]
    Integrity(Vec<IntegrityIssue>),
}

fn join_issues(issues: &[IntegrityIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<serde_json::Error> for CorpusError {
    fn from(e: serde_json::Error) -> Self {
        CorpusError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&raw)
}

/// Parses a dataset document, normalizing article text with [`preprocess_text`].
pub fn parse_dataset(raw: &str) -> Result<Dataset, CorpusError> {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    let value: serde_json::Value = serde_json::from_str(raw)?;
    let native = value
        .as_object()
        .is_some_and(|o| o.contains_key("articles"));
    let mut dataset = if native {
        serde_json::from_value::<Dataset>(value).map_err(|e| CorpusError::Parse {
            line: 0,
            column: 0,
            message: e.to_string(),
        })?
    } else {
        zenodo::import(&value)?
    };
    for article in &mut dataset.articles {
        article.body = preprocess_text(&article.body);
        article.title = article.title.as_deref().map(preprocess_text);
    }
    dataset.validate()?;
    Ok(dataset)
}
