//! Finding JSON inside free-form model output.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::EntityClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invalid {
    /// No JSON object anywhere in the text.
    NoJson,
    /// More than one top-level JSON object; the answer is ambiguous.
    MultipleJson,
    /// The object lacks the class key.
    WrongKey,
    /// The class key does not hold an array of strings.
    WrongValueType,
    /// The array holds empty or whitespace-only strings.
    EmptyStrings,
    /// Salvage found no array of strings either.
    Unrecoverable,
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invalid::NoJson => "no-json",
            Invalid::MultipleJson => "multiple-json",
            Invalid::WrongKey => "wrong-key",
            Invalid::WrongValueType => "wrong-value-type",
            Invalid::EmptyStrings => "empty-strings",
            Invalid::Unrecoverable => "unrecoverable",
        })
    }
}

/// Byte offset one past the bracket that closes the one at `start`, scanning with JSON
/// string rules (brackets inside string literals and escaped quotes are skipped).
/// `None` if the text ends first.
pub(crate) fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Top-level JSON objects in `text`, left to right, non-overlapping.
pub(crate) fn json_objects(text: &str) -> Vec<serde_json::Map<String, Value>> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(rel) = text[i..].find('{') {
        let start = i + rel;
        match balanced_end(text, start).and_then(|end| {
            serde_json::from_str::<Value>(&text[start..end])
                .ok()
                .map(|v| (end, v))
        }) {
            Some((end, Value::Object(map))) => {
                out.push(map);
                i = end;
            }
            _ => i = start + 1,
        }
    }
    out
}

/// The first `[`-opened span, by start position, that parses as `T`.
pub(crate) fn first_json_array<T: DeserializeOwned>(text: &str) -> Option<T> {
    text.match_indices('[').find_map(|(start, _)| {
        let end = balanced_end(text, start)?;
        serde_json::from_str::<T>(&text[start..end]).ok()
    })
}

/// Checks a model response against the required schema: exactly one JSON object whose
/// class key (`individuals` / `organizations`) holds an array of non-empty strings.
/// Other keys in the object are tolerated. Returns the array in order.
pub fn validate_response(text: &str, class: EntityClass) -> Result<Vec<String>, Invalid> {
    let objects = json_objects(text);
    let object = match objects.as_slice() {
        [] => return Err(Invalid::NoJson),
        [one] => one,
        _ => return Err(Invalid::MultipleJson),
    };
    let value = object.get(class.json_key()).ok_or(Invalid::WrongKey)?;
    let items = value.as_array().ok_or(Invalid::WrongValueType)?;
    let names = items
        .iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect::<Option<Vec<String>>>()
        .ok_or(Invalid::WrongValueType)?;
    if names.iter().any(|n| n.trim().is_empty()) {
        return Err(Invalid::EmptyStrings);
    }
    Ok(names)
}

/// Last-resort recovery: the first well-formed JSON array of strings anywhere in the
/// text (by start position).
pub fn salvage_parse(text: &str, _class: EntityClass) -> Result<Vec<String>, Invalid> {
    first_json_array::<Vec<String>>(text).ok_or(Invalid::Unrecoverable)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IND: EntityClass = EntityClass::Individual;
    const ORG: EntityClass = EntityClass::Organization;

    #[test]
    fn valid_object() {
        assert_eq!(
            validate_response(r#"{"individuals":["John Smith","A. Karimova"]}"#, IND),
            Ok(vec!["John Smith".to_string(), "A. Karimova".to_string()])
        );
    }

    #[test]
    fn object_wrapped_in_prose_and_fences() {
        let text = "Step 1: read. Step 2: list.\n```json\n{\"organizations\": [\"FBI\", \"{odd} name\"]}\n```";
        assert_eq!(validate_response(text, ORG).unwrap(), ["FBI", "{odd} name"]);
    }

    #[test]
    fn prose_only() {
        assert_eq!(
            validate_response("Sure! Here are the names: John, Mary", IND),
            Err(Invalid::NoJson)
        );
    }

    #[test]
    fn empty_list_is_valid() {
        assert_eq!(
            validate_response(r#"{"organizations":[]}"#, ORG),
            Ok(vec![])
        );
    }

    #[test]
    fn failure_reasons() {
        assert_eq!(
            validate_response(r#"{"persons":["A"]}"#, IND),
            Err(Invalid::WrongKey)
        );
        assert_eq!(
            validate_response(r#"{"individuals":"A"}"#, IND),
            Err(Invalid::WrongValueType)
        );
        assert_eq!(
            validate_response(r#"{"individuals":["A", 3]}"#, IND),
            Err(Invalid::WrongValueType)
        );
        assert_eq!(
            validate_response(r#"{"individuals":["A", " "]}"#, IND),
            Err(Invalid::EmptyStrings)
        );
        assert_eq!(
            validate_response(r#"{"individuals":["A"]} and {"individuals":["B"]}"#, IND),
            Err(Invalid::MultipleJson)
        );
        assert_eq!(
            validate_response(r#"{"individuals": ["A""#, IND),
            Err(Invalid::NoJson)
        );
    }

    #[test]
    fn salvage_examples() {
        assert_eq!(
            salvage_parse("Answer: [\"FBI\", \"Europol\"] hope this helps", ORG).unwrap(),
            ["FBI", "Europol"]
        );
        assert_eq!(
            salvage_parse("no entities found", ORG),
            Err(Invalid::Unrecoverable)
        );
        assert_eq!(salvage_parse(r#"["A"] then ["B"]"#, ORG).unwrap(), ["A"]);
        assert_eq!(
            salvage_parse(r#"{"individuals": ["Ann", "Bo"], broken"#, IND).unwrap(),
            ["Ann", "Bo"]
        );
        assert_eq!(salvage_parse(r#"[["A","B"]]"#, IND).unwrap(), ["A", "B"]);
    }

    #[test]
    fn brackets_inside_strings_do_not_confuse_scanner() {
        let text = r#"He wrote "[" and then ["A \"]\" B", "C"]"#;
        assert_eq!(salvage_parse(text, IND).unwrap(), ["A \"]\" B", "C"]);
    }
}
