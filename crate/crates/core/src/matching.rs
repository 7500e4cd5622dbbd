//! Aligns gold and predicted mentions that name the same entity, then rewrites the
//! prediction so aligned mentions compare equal.
//!
//! Matching sits on the evaluation side only. It reads the gold list, so its output
//! feeds scoring and run logs but never a [`crate::extraction::Prediction`].

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::extraction::first_json_array;
use crate::gateway::{ChatParams, ChatRequest, Gateway, GatewayError, Purpose};
use crate::prompts::{PromptError, PromptSet};

pub const DEFAULT_MATCHING_MODEL: &str = "gemma2:9b";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Oracle,
}

/// Positional pairs `list1[i] <-> list2[i]` (gold, predicted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "MatchRecord", try_from = "MatchRecord")]
pub struct MatchResult {
    list1: Vec<String>,
    list2: Vec<String>,
    provenance: Provenance,
}

/// Wire form: the pairs-array schema plus provenance.
#[derive(Serialize, Deserialize)]
struct MatchRecord {
    provenance: Provenance,
    pairs: Vec<(String, String)>,
}

impl From<MatchResult> for MatchRecord {
    fn from(m: MatchResult) -> Self {
        MatchRecord {
            provenance: m.provenance,
            pairs: m.list1.into_iter().zip(m.list2).collect(),
        }
    }
}

impl TryFrom<MatchRecord> for MatchResult {
    type Error = String;

    fn try_from(r: MatchRecord) -> Result<Self, String> {
        let (list1, list2): (Vec<_>, Vec<_>) = r.pairs.into_iter().unzip();
        for list in [&list1, &list2] {
            let mut seen = HashSet::new();
            if let Some(dup) = list.iter().find(|s| !seen.insert(s.as_str())) {
                return Err(format!("\"{dup}\" is paired twice"));
            }
        }
        Ok(MatchResult {
            list1,
            list2,
            provenance: r.provenance,
        })
    }
}

impl MatchResult {
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            list1: Vec::new(),
            list2: Vec::new(),
            provenance,
        }
    }

    pub fn list1(&self) -> &[String] {
        &self.list1
    }

    pub fn list2(&self) -> &[String] {
        &self.list2
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.list1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list1.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.list1
            .iter()
            .map(String::as_str)
            .zip(self.list2.iter().map(String::as_str))
    }

    /// Membership and one-to-one checks against the lists the match was made from.
    pub fn is_valid_for<G: AsRef<str>, P: AsRef<str>>(&self, gold: &[G], pred: &[P]) -> bool {
        let gold: HashSet<&str> = gold.iter().map(AsRef::as_ref).collect();
        let pred: HashSet<&str> = pred.iter().map(AsRef::as_ref).collect();
        let distinct = |l: &[String]| l.iter().collect::<HashSet<_>>().len() == l.len();
        self.list1.len() == self.list2.len()
            && distinct(&self.list1)
            && distinct(&self.list2)
            && self.list1.iter().all(|g| gold.contains(g.as_str()))
            && self.list2.iter().all(|p| pred.contains(p.as_str()))
    }

    fn push(&mut self, gold: &str, pred: &str) {
        self.list1.push(gold.to_string());
        self.list2.push(pred.to_string());
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("match pairs \"{0}\", which is not in the prediction")]
    Contract(String),
}

/// Pairs from a matching answer, filtered to a valid one-to-one match.
///
/// A pair is dropped when either side is not an exact member of its list, when the
/// predicted side is itself a gold entry other than the paired one, or when either
/// side was already used by an earlier pair. Unparseable text gives an empty result.
pub fn parse_match_output<G: AsRef<str>, P: AsRef<str>>(
    text: &str,
    gold: &[G],
    pred: &[P],
) -> MatchResult {
    let mut result = MatchResult::empty(Provenance::Llm);
    let Some(raw) = first_json_array::<Vec<Vec<String>>>(text) else {
        tracing::warn!(answer = %truncate(text, 200), "matching answer has no pairs array");
        return result;
    };
    let gold: HashSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    let pred: HashSet<&str> = pred.iter().map(AsRef::as_ref).collect();
    let mut used_gold = HashSet::new();
    let mut used_pred = HashSet::new();
    for pair in &raw {
        let [g, p] = pair.as_slice() else { continue };
        let (g, p) = (g.as_str(), p.as_str());
        if !gold.contains(g) || !pred.contains(p) {
            continue;
        }
        if p != g && gold.contains(p) {
            continue;
        }
        if used_gold.contains(g) || used_pred.contains(p) {
            continue;
        }
        used_gold.insert(g);
        used_pred.insert(p);
        result.push(g, p);
    }
    result
}

fn truncate(s: &str, max_chars: usize) -> &str {
    s.char_indices().nth(max_chars).map_or(s, |(i, _)| &s[..i])
}

/// Key for the deterministic matcher: trimmed, whitespace collapsed, lowercased,
/// trailing `.,;:!?` removed.
pub fn oracle_key(s: &str) -> String {
    let collapsed = crate::text::collapse_whitespace(&s.to_lowercase());
    collapsed
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim_end()
        .to_string()
}

/// Deterministic matcher. Exact-equal elements are paired first, then elements equal
/// under [`oracle_key`], each pass greedy in gold order.
pub fn oracle_match<G: AsRef<str>, P: AsRef<str>>(gold: &[G], pred: &[P]) -> MatchResult {
    let gold = distinct(gold);
    let pred = distinct(pred);
    let mut result = MatchResult::empty(Provenance::Oracle);
    let pred_keys: Vec<String> = pred.iter().map(|p| oracle_key(p)).collect();

    let mut by_gold: HashMap<usize, usize> = HashMap::new();
    let mut taken = vec![false; pred.len()];
    for (gi, g) in gold.iter().enumerate() {
        if let Some(pi) = pred.iter().position(|p| p == g) {
            by_gold.insert(gi, pi);
            taken[pi] = true;
        }
    }
    for (gi, g) in gold.iter().enumerate() {
        if by_gold.contains_key(&gi) {
            continue;
        }
        let key = oracle_key(g);
        if let Some(pi) = (0..pred.len()).find(|&pi| !taken[pi] && pred_keys[pi] == key) {
            by_gold.insert(gi, pi);
            taken[pi] = true;
        }
    }
    for (gi, g) in gold.iter().enumerate() {
        if let Some(&pi) = by_gold.get(&gi) {
            result.push(g, pred[pi]);
        }
    }
    result
}

fn distinct<S: AsRef<str>>(items: &[S]) -> Vec<&str> {
    let mut seen = HashSet::new();
    items
        .iter()
        .map(AsRef::as_ref)
        .filter(|s| seen.insert(*s))
        .collect()
}

/// Rewrites each matched predicted mention to its gold counterpart, keeping order and
/// dropping later duplicates. All pairs are applied at once.
///
/// A pair whose predicted side is missing is accepted only when its gold side is
/// already present, which is the state after a previous rename with the same match.
pub fn rename<P: AsRef<str>>(pred: &[P], m: &MatchResult) -> Result<Vec<String>, MatchError> {
    let present: HashSet<&str> = pred.iter().map(AsRef::as_ref).collect();
    let mut mapping: HashMap<&str, &str> = HashMap::new();
    for (g, p) in m.pairs() {
        if present.contains(p) {
            mapping.insert(p, g);
        } else if !present.contains(g) {
            return Err(MatchError::Contract(p.to_string()));
        }
    }
    let mut seen = HashSet::new();
    Ok(pred
        .iter()
        .map(|p| *mapping.get(p.as_ref()).unwrap_or(&p.as_ref()))
        .filter(|s| seen.insert(*s))
        .map(str::to_string)
        .collect())
}

/// Matching through the model.
pub struct Matcher<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    model_id: String,
    params: ChatParams,
}

impl<'a> Matcher<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet) -> Self {
        Self {
            gateway,
            prompts,
            model_id: DEFAULT_MATCHING_MODEL.to_string(),
            params: ChatParams::default(),
        }
    }

    pub fn model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn params(mut self, params: ChatParams) -> Self {
        self.params = params;
        self
    }

    /// Empty lists short-circuit to an empty match without a model call.
    pub async fn llm_match<G: AsRef<str>, P: AsRef<str>>(
        &self,
        gold: &[G],
        pred: &[P],
    ) -> Result<MatchResult, MatchError> {
        Ok(self.llm_match_timed(gold, pred).await?.0)
    }

    /// Like [`Matcher::llm_match`], also returning the call latency (0 when skipped).
    pub async fn llm_match_timed<G: AsRef<str>, P: AsRef<str>>(
        &self,
        gold: &[G],
        pred: &[P],
    ) -> Result<(MatchResult, f64), MatchError> {
        if gold.is_empty() || pred.is_empty() {
            return Ok((MatchResult::empty(Provenance::Llm), 0.0));
        }
        let prompt = self.prompts.render_matching_prompt(gold, pred)?;
        let request = ChatRequest::new(&self.model_id, prompt, Purpose::Matching)
            .with_params(self.params.clone());
        let exchange = self.gateway.chat(request).await?;
        Ok((
            parse_match_output(&exchange.response_text, gold, pred),
            exchange.latency_s,
        ))
    }
}
