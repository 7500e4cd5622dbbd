use serde::{Deserialize, Serialize};

use super::preprocess::decode_whitespace_escapes;
use super::Article;

/// Corpus size statistics.
///
/// Tokenization is deliberately simple and reproducible: a sentence ends at `.`, `!` or
/// `?` followed by whitespace or end of text (abbreviations are not recognised, so
/// "Dr. Smith" splits), a trailing unterminated segment counts as one sentence, a word is
/// a maximal run of non-whitespace, and characters are Unicode scalar values. The
/// `\n`/`\r`/`\t` escapes produced by preprocessing count as a single whitespace char.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub article_count: usize,
    pub sentence_count: usize,
    pub word_count: usize,
    pub char_count: usize,
    /// `word_count / sentence_count`, one decimal place; 0.0 for an empty corpus.
    pub avg_sentence_len_words: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    sentences: usize,
    words: usize,
    chars: usize,
}

fn count_text(text: &str) -> Counts {
    let text = decode_whitespace_escapes(text);
    let mut counts = Counts::default();
    let mut in_segment = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        counts.chars += 1;
        if c.is_whitespace() {
            continue;
        }
        in_segment = true;
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            counts.sentences += 1;
            in_segment = false;
        }
    }
    if in_segment {
        counts.sentences += 1;
    }
    counts.words = text.split_whitespace().count();
    counts
}

pub fn compute_stats(articles: &[Article]) -> CorpusStats {
    let total = articles
        .iter()
        .map(|a| count_text(&a.body))
        .fold(Counts::default(), |acc, c| Counts {
            sentences: acc.sentences + c.sentences,
            words: acc.words + c.words,
            chars: acc.chars + c.chars,
        });
    let avg = if total.sentences == 0 {
        0.0
    } else {
        (total.words as f64 / total.sentences as f64 * 10.0).round() / 10.0
    };
    CorpusStats {
        article_count: articles.len(),
        sentence_count: total.sentences,
        word_count: total.words,
        char_count: total.chars,
        avg_sentence_len_words: avg,
    }
}
