//! Small text helpers shared by scorers.

use regex::RegexBuilder;

/// Case-insensitive match of an assertion pattern. Patterns are regular
/// expressions; a pattern that fails to compile is matched as a literal
/// substring instead.
pub fn pattern_matches(pattern: &str, text: &str) -> bool {
    match RegexBuilder::new(pattern).case_insensitive(true).build() {
        Ok(re) => re.is_match(text),
        Err(_) => text.to_lowercase().contains(&pattern.to_lowercase()),
    }
}

/// Whitespace-plus-punctuation token count: runs of alphanumerics count as
/// one token each, every other non-space character counts on its own.
pub fn count_tokens(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}

/// First `max` characters of `text`.
pub fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns() {
        assert!(pattern_matches("Sepsis", "suspected SEPSIS bundle"));
        assert!(pattern_matches("lactate|fluids", "give fluids"));
        assert!(pattern_matches("(unclosed", "text (unclosed paren"));
        assert!(!pattern_matches("stemi", "no mention"));
    }

    #[test]
    fn token_counting() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("the diagnosis is sepsis"), 4);
        assert_eq!(count_tokens("{\"a\":1}"), 7);
    }

    #[test]
    fn char_truncation() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("hi", 10), "hi");
    }
}
