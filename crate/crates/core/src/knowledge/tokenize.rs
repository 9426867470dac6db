//! `unicode61`-style word segmentation followed by Porter stemming.
//!
//! Token characters are Unicode letters and numbers; everything else
//! separates tokens. Diacritics are removed (NFD, drop combining marks) and
//! tokens are lowercased before stemming.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::porter;

/// A term together with the byte span of the source token it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: String,
    pub start: usize,
    pub end: usize,
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

fn fold(raw: &str) -> String {
    raw.nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Tokenizes with byte spans into the original text.
pub fn tokenize_spans(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (is_token_char(c), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                push_token(&mut out, text, s, i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        push_token(&mut out, text, s, text.len());
    }
    out
}

fn push_token(out: &mut Vec<Token>, text: &str, start: usize, end: usize) {
    let folded = fold(&text[start..end]);
    if folded.is_empty() {
        return;
    }
    out.push(Token {
        term: porter::stem(&folded),
        start,
        end,
    });
}

/// Lowercased, diacritic-free, Porter-stemmed terms of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.term).collect()
}
