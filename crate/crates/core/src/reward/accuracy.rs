//! Exact and soft answer matching.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::knowledge::tokenize;

fn normalize(s: &str) -> String {
    let s = s.trim().to_lowercase();
    let s = s.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Option letter named by an answer such as `B`, `b)`, `(C)`, `D. text`,
/// `answer: E` or `option a`.
pub fn extract_letter(answer: &str) -> Option<char> {
    static RE: OnceLock<[Regex; 2]> = OnceLock::new();
    let [lead, named] = RE.get_or_init(|| {
        [
            Regex::new(r"^\(?([A-Ea-e])\)?(?:[.):,\s]|$)").expect("static"),
            Regex::new(r"(?i)^(?:the\s+)?(?:final\s+)?(?:answer|option)(?:\s+is)?\s*[:\-]?\s*\(?([A-E])\)?(?:[^A-Za-z]|$)")
                .expect("static"),
        ]
    });
    let t = answer.trim();
    lead.captures(t)
        .or_else(|| named.captures(t))
        .and_then(|c| c[1].chars().next())
        .map(|c| c.to_ascii_uppercase())
}

/// 1.0 on a normalized match, else 0.0. A single-letter gold is compared
/// by the letter extracted from the answer.
pub fn accuracy_exact(answer: &str, gold: &str) -> f64 {
    let g = normalize(gold);
    let hit = if g.len() == 1 && g.chars().all(|c| ('a'..='e').contains(&c)) {
        extract_letter(answer).map(|c| c.to_ascii_lowercase().to_string()) == Some(g)
    } else {
        normalize(answer) == g
    };
    if hit {
        1.0
    } else {
        0.0
    }
}

fn counts(terms: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in terms {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Unigram overlap between answer and gold terms: (clipped overlap,
/// answer length, gold length).
fn overlap(answer: &str, gold: &str) -> (usize, usize, usize) {
    let (a, g) = (tokenize(answer), tokenize(gold));
    let (ca, cg) = (counts(&a), counts(&g));
    let ov = ca.iter().map(|(t, n)| (*n).min(cg.get(t).copied().unwrap_or(0))).sum();
    (ov, a.len(), g.len())
}

pub fn rouge1_f1(answer: &str, gold: &str) -> f64 {
    let (ov, la, lg) = overlap(answer, gold);
    if ov == 0 {
        return 0.0;
    }
    let (p, r) = (ov as f64 / la as f64, ov as f64 / lg as f64);
    2.0 * p * r / (p + r)
}

/// Clipped unigram precision times the brevity penalty.
pub fn bleu1(answer: &str, gold: &str) -> f64 {
    let (ov, la, lg) = overlap(answer, gold);
    if la == 0 || lg == 0 {
        return 0.0;
    }
    let bp = if la > lg { 1.0 } else { (1.0 - lg as f64 / la as f64).exp() };
    bp * ov as f64 / la as f64
}

/// Mean of ROUGE-1 F1 and BLEU-1 over stemmed terms.
pub fn accuracy_soft(answer: &str, gold: &str) -> f64 {
    (rouge1_f1(answer, gold) + bleu1(answer, gold)) / 2.0
}
