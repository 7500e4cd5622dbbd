//! Small string normalization helpers shared by the corpus, parser and matcher.

/// Trims and collapses every internal whitespace run to a single space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Key used for duplicate detection in gold lists and predictions.
///
/// Case-sensitive on purpose: "John Smith" and "JOHN SMITH" stay distinct here and are
/// reconciled by the matching layer.
pub fn dedup_key(s: &str) -> String {
    collapse_whitespace(s)
}

/// Removes duplicates under [`dedup_key`] equality, keeping the first occurrence.
/// Entries that normalize to the empty string are dropped. Kept entries are returned
/// in normalized form.
pub fn dedup_normalized<I, S>(items: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for item in items {
        let key = dedup_key(item.as_ref());
        if key.is_empty() {
            continue;
        }
        if seen.insert(key.clone()) {
            out.push(key);
        }
    }
    out
}
