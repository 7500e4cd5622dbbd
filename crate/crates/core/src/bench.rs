//! Annotation drafts for building new gold datasets: pre-annotation, validation,
//! advisory model verification and export.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Dataset, EntityClass, GoldRecord};
use crate::extraction::{json_objects, Prediction};
use crate::gateway::{ChatParams, ChatRequest, Gateway, GatewayError, Purpose};
use crate::prompts::{PromptError, PromptSet};
use crate::text::{collapse_whitespace, dedup_key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Proposed,
    Accepted,
    Rejected,
    Added,
}

impl EntryStatus {
    /// Entries that end up in the gold list.
    pub fn is_kept(self) -> bool {
        matches!(self, EntryStatus::Accepted | EntryStatus::Added)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    Baseline,
    Llm,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftEntry {
    pub text: String,
    pub status: EntryStatus,
    pub source: EntrySource,
    /// Free-form reviewer note, e.g. the outcome of a manual web search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DraftEntry {
    pub fn new(text: impl Into<String>, status: EntryStatus, source: EntrySource) -> Self {
        Self {
            text: text.into(),
            status,
            source,
            note: None,
        }
    }
}

/// One reviewer's working copy for an article and class. `version` counts stored
/// writes; 0 means nothing has been stored yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDraft {
    pub article_id: String,
    pub entity_class: EntityClass,
    pub entries: Vec<DraftEntry>,
    pub version: u64,
}

impl AnnotationDraft {
    pub fn empty(article_id: impl Into<String>, entity_class: EntityClass) -> Self {
        Self {
            article_id: article_id.into(),
            entity_class,
            entries: Vec::new(),
            version: 0,
        }
    }

    /// Kept entries, whitespace-normalized, in draft order.
    pub fn gold_entries(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.status.is_kept())
            .map(|e| collapse_whitespace(&e.text))
            .collect()
    }
}

/// Version-0 draft proposing every predicted entity.
pub fn draft_from_prediction(
    article_id: &str,
    class: EntityClass,
    prediction: Option<&Prediction>,
    source: EntrySource,
) -> AnnotationDraft {
    let mut draft = AnnotationDraft::empty(article_id, class);
    if let Some(p) = prediction {
        draft.entries = crate::text::dedup_normalized(&p.entities)
            .into_iter()
            .map(|t| DraftEntry::new(t, EntryStatus::Proposed, source))
            .collect();
    }
    draft
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DraftError {
    #[error("entries[{0}]: kept entry has empty text")]
    EmptyEntry(usize),
    #[error("entries[{index}]: \"{text}\" is already kept earlier in the draft")]
    DuplicateEntry { index: usize, text: String },
    #[error("draft is for {found}, not {expected}")]
    WrongTarget { expected: String, found: String },
}

/// Checks a draft submitted for `(article_id, class)`.
pub fn validate_draft(
    draft: &AnnotationDraft,
    article_id: &str,
    class: EntityClass,
) -> Result<(), DraftError> {
    if draft.article_id != article_id || draft.entity_class != class {
        return Err(DraftError::WrongTarget {
            expected: format!("{article_id}/{class}"),
            found: format!("{}/{}", draft.article_id, draft.entity_class),
        });
    }
    let mut kept = HashSet::new();
    for (index, entry) in draft.entries.iter().enumerate() {
        if !entry.status.is_kept() {
            continue;
        }
        let key = dedup_key(&entry.text);
        if key.is_empty() {
            return Err(DraftError::EmptyEntry(index));
        }
        if !kept.insert(key) {
            return Err(DraftError::DuplicateEntry {
                index,
                text: entry.text.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not reviewed: {}", .0.join(", "))]
pub struct Unreviewed(pub Vec<String>);

/// Builds a dataset from the latest stored draft of every article and class. `drafts`
/// yields the stored draft for an (article, class), if any write happened.
pub fn export_gold<F>(articles: &[Article], mut drafts: F) -> Result<Dataset, Unreviewed>
where
    F: FnMut(&str, EntityClass) -> Option<AnnotationDraft>,
{
    let mut missing = Vec::new();
    let mut gold = Vec::new();
    for article in articles {
        let mut lists = [Vec::new(), Vec::new()];
        let mut reviewed = true;
        for (slot, class) in EntityClass::ALL.into_iter().enumerate() {
            match drafts(&article.id, class) {
                Some(d) if d.version >= 1 => lists[slot] = d.gold_entries(),
                _ => reviewed = false,
            }
        }
        if !reviewed {
            missing.push(article.id.clone());
            continue;
        }
        let [individuals, organizations] = lists;
        gold.push(GoldRecord {
            article_id: article.id.clone(),
            individuals,
            organizations,
        });
    }
    if !missing.is_empty() {
        return Err(Unreviewed(missing));
    }
    Ok(Dataset {
        articles: articles.to_vec(),
        gold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Confirm,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub entry: String,
    pub verdict: Verdict,
    pub note: String,
}

/// Whether `entry` appears in the body, ignoring whitespace differences and the
/// escaped line breaks left by preprocessing.
pub fn appears_verbatim(body: &str, entry: &str) -> bool {
    let body = collapse_whitespace(&crate::corpus::decode_whitespace_escapes(body));
    let entry = collapse_whitespace(entry);
    !entry.is_empty() && body.contains(&entry)
}

/// Reads `{"verdict": "confirm"|"flag", "note": "..."}` from a verifier answer.
pub fn parse_verdict(text: &str) -> Option<(Verdict, String)> {
    json_objects(text).into_iter().find_map(|obj| {
        let verdict = match obj.get("verdict")?.as_str()?.trim().to_lowercase().as_str() {
            "confirm" => Verdict::Confirm,
            "flag" => Verdict::Flag,
            _ => return None,
        };
        let note = obj
            .get("note")
            .and_then(|n| n.as_str())
            .unwrap_or_default()
            .to_string();
        Some((verdict, note))
    })
}

/// Combines the verbatim check with the verifier's answer. An entry missing from the
/// body is always flagged; otherwise the verifier decides, and an unreadable answer
/// falls back to the verbatim check.
pub fn decide(verbatim: bool, answer: Option<(Verdict, String)>) -> (Verdict, String) {
    match (verbatim, answer) {
        (false, Some((_, note))) if !note.is_empty() => (Verdict::Flag, note),
        (false, _) => (Verdict::Flag, "not found verbatim in the article".into()),
        (true, Some((verdict, note))) => (verdict, note),
        (true, None) => (
            Verdict::Confirm,
            "verifier answer unreadable; found verbatim in the article".into(),
        ),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Asks the model about every kept entry. Advisory only: the draft is not touched.
pub async fn verify_draft(
    gateway: &Gateway,
    prompts: &PromptSet,
    article: &Article,
    draft: &AnnotationDraft,
    model_id: &str,
    params: &ChatParams,
) -> Result<Vec<VerificationResult>, VerifyError> {
    let mut out = Vec::new();
    for entry in draft.gold_entries() {
        let prompt = prompts.render_verification_prompt(article, draft.entity_class, &entry)?;
        let request =
            ChatRequest::new(model_id, prompt, Purpose::Verification).with_params(params.clone());
        let exchange = gateway.chat(request).await?;
        let (verdict, note) = decide(
            appears_verbatim(&article.body, &entry),
            parse_verdict(&exchange.response_text),
        );
        out.push(VerificationResult {
            entry,
            verdict,
            note,
        });
    }
    Ok(out)
}

/// Error body of every failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

/// One line of `GET /articles`. `versions` holds the stored draft version per class,
/// 0 when none has been written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleSummary {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub case_label: Option<String>,
    pub versions: ClassVersions,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVersions {
    pub individual: u64,
    pub organization: u64,
}

impl ClassVersions {
    pub fn get(&self, class: EntityClass) -> u64 {
        match class {
            EntityClass::Individual => self.individual,
            EntityClass::Organization => self.organization,
        }
    }

    pub fn set(&mut self, class: EntityClass, version: u64) {
        match class {
            EntityClass::Individual => self.individual = version,
            EntityClass::Organization => self.organization = version,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredVersion {
    pub version: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyRequest {
    /// Defaults to the service's configured verifier model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRequest {
    pub dataset_name: String,
}

/// Names usable as a single path component without escaping.
pub fn is_safe_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}
