use std::collections::BTreeSet;

use super::PromptError;

/// A prompt text with `{name}` placeholders.
///
/// Only `{identifier}` sequences (lowercase ASCII letters, digits and `_`, starting with
/// a letter) are placeholders, so JSON examples such as `{"individuals": []}` in the
/// text are left alone. Substitution is single-pass: bound values are never rescanned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub text: String,
}

enum Piece<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let name_start = i + 1;
            let mut j = name_start;
            while j < bytes.len()
                && (bytes[j].is_ascii_lowercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_')
            {
                j += 1;
            }
            if j > name_start
                && j < bytes.len()
                && bytes[j] == b'}'
                && bytes[name_start].is_ascii_lowercase()
            {
                out.push(Piece::Literal(&text[literal_start..i]));
                out.push(Piece::Placeholder(&text[name_start..j]));
                i = j + 1;
                literal_start = i;
                continue;
            }
        }
        i += 1;
    }
    out.push(Piece::Literal(&text[literal_start..]));
    out
}

impl PromptTemplate {
    pub fn new(template_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            text: text.into(),
        }
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        pieces(&self.text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Placeholder(name) => Some(name),
                Piece::Literal(_) => None,
            })
            .collect()
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len());
        for piece in pieces(&self.text) {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Placeholder(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::Unbound {
                            template_id: self.template_id.clone(),
                            placeholder: name.to_string(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}
