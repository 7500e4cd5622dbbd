/// Makes article text safe to embed in a JSON string value.
///
/// Typographic quotes become straight quotes, dashes become `-`, non-breaking spaces
/// become plain spaces, and line feed, carriage return and tab become the two-character
/// sequences `\n`, `\r`, `\t`. Any other control character becomes a `\uXXXX` sequence.
/// Everything else is kept; JSON escaping of `"` and `\` happens at serialization time.
///
/// The mapping is idempotent.
pub fn preprocess_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' => out.push('"'),
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' => out.push('\''),
            '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' => out.push('-'),
            '\u{00A0}' | '\u{202F}' | '\u{2007}' => out.push(' '),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// Reverses the whitespace escapes so text can be tokenized.
pub(crate) fn decode_whitespace_escapes(text: &str) -> String {
    text.replace("\\n", " ")
        .replace("\\r", " ")
        .replace("\\t", " ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_ascii_unchanged() {
        assert_eq!(preprocess_text("plain ascii text"), "plain ascii text");
    }

    #[test]
    fn line_feed_becomes_escape_sequence() {
        assert_eq!(preprocess_text("a\nb"), "a\\nb");
        assert_eq!(preprocess_text("a\r\n\tb"), "a\\r\\n\\tb");
    }

    #[test]
    fn curly_quotes_then_json_escaped() {
        let out = preprocess_text("\u{201C}Acme\u{201D} \u{2014} it\u{2019}s");
        assert_eq!(out, "\"Acme\" - it's");
        assert_eq!(serde_json::to_string(&out).unwrap(), r#""\"Acme\" - it's""#);
    }

    #[test]
    fn other_controls_are_escaped() {
        assert_eq!(preprocess_text("a\u{0007}b\u{00A0}c"), "a\\u0007b c");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC*|[\\n\\r\\t\u{201C}\u{201D}\u{2013}\u{00A0}a \\\\]{0,40}") {
            let once = preprocess_text(&s);
            prop_assert_eq!(preprocess_text(&once), once.clone());
            prop_assert!(!once.chars().any(char::is_control));
        }

        #[test]
        fn output_round_trips_through_json(s in any::<String>()) {
            let once = preprocess_text(&s);
            let json = serde_json::to_string(&once).unwrap();
            let back: String = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, once);
        }
    }
}
