//! Import shim for the published benchmark record.
//!
//! The record ships articles and annotations together as JSON. Accepted shapes:
//!
//! * a top-level array of records, or
//! * a top-level object mapping article ids to records, or
//! * an object with one array-valued field holding the records (e.g. `{"data": [...]}`).
//!
//! Within a record, key names are matched case-insensitively:
//! text from `body`, `text`, `article`, `content`; id from `id`, `article_id`
//! (falling back to the map key or `a01`, `a02`, ... by position); `title`; case from
//! `case`, `case_label`; individuals from `individuals`, `persons`, `people`;
//! organizations from `organizations`, `organisations`, `orgs`.
//! Entity lists may be arrays of strings or a single comma-separated string.

use serde_json::{Map, Value};

use super::{Article, CorpusError, Dataset, GoldRecord, IntegrityIssue};

const TEXT_KEYS: &[&str] = &["body", "text", "article", "content"];
const ID_KEYS: &[&str] = &["id", "article_id"];
const TITLE_KEYS: &[&str] = &["title"];
const CASE_KEYS: &[&str] = &["case", "case_label"];
const IND_KEYS: &[&str] = &["individuals", "persons", "people"];
const ORG_KEYS: &[&str] = &["organizations", "organisations", "orgs"];

fn lookup<'a>(record: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    record
        .iter()
        .find(|(k, _)| keys.iter().any(|key| k.eq_ignore_ascii_case(key)))
        .map(|(_, v)| v)
}

fn string_list(value: Option<&Value>) -> Option<Vec<String>> {
    match value {
        None | Some(Value::Null) => Some(Vec::new()),
        Some(Value::String(s)) => Some(
            s.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        ),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect(),
        Some(_) => None,
    }
}

fn issue(location: String, message: &str) -> CorpusError {
    CorpusError::Integrity(vec![IntegrityIssue::new(location, message)])
}

type Records<'a> = Vec<(Option<String>, &'a Map<String, Value>)>;

fn records(value: &Value) -> Result<Records<'_>, CorpusError> {
    fn as_record((i, v): (usize, &Value)) -> Result<&Map<String, Value>, CorpusError> {
        v.as_object()
            .ok_or_else(|| issue(format!("[{i}]"), "record is not an object"))
    }
    match value {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|p| as_record(p).map(|r| (None, r)))
            .collect(),
        Value::Object(map) => {
            let arrays: Vec<&Value> = map.values().filter(|v| v.is_array()).collect();
            if map.len() == 1 && arrays.len() == 1 {
                return records(arrays[0]);
            }
            map.iter()
                .enumerate()
                .map(|(i, (k, v))| as_record((i, v)).map(|r| (Some(k.clone()), r)))
                .collect()
        }
        _ => Err(issue("$".into(), "expected an array or object of records")),
    }
}

pub fn import(value: &Value) -> Result<Dataset, CorpusError> {
    let mut dataset = Dataset::default();
    for (i, (map_key, record)) in records(value)?.into_iter().enumerate() {
        let id = lookup(record, ID_KEYS)
            .and_then(|v| match v {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
            .or(map_key)
            .unwrap_or_else(|| format!("a{:02}", i + 1));
        let body = lookup(record, TEXT_KEYS)
            .and_then(Value::as_str)
            .ok_or_else(|| issue(format!("[{i}]"), "record has no article text"))?
            .to_string();
        let title = lookup(record, TITLE_KEYS)
            .and_then(Value::as_str)
            .map(str::to_string);
        let case_label = lookup(record, CASE_KEYS)
            .and_then(Value::as_str)
            .map(str::to_string);
        let individuals = string_list(lookup(record, IND_KEYS))
            .ok_or_else(|| issue(format!("[{i}].individuals"), "not a list of strings"))?;
        let organizations = string_list(lookup(record, ORG_KEYS))
            .ok_or_else(|| issue(format!("[{i}].organizations"), "not a list of strings"))?;

        dataset.articles.push(Article {
            id: id.clone(),
            title,
            body,
            case_label,
            language: "en".into(),
        });
        dataset.gold.push(GoldRecord {
            article_id: id,
            individuals,
            organizations,
        });
    }
    Ok(dataset)
}
