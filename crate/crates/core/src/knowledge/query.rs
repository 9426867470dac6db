//! Boolean query language for the passage index.
//!
//! Grammar, loosest binding first (FTS5 precedence):
//!
//! ```text
//! or   := and ("OR" and)*
//! and  := not ("AND"? not)*        adjacent terms are an implicit AND
//! not  := atom ("NOT" atom)*       binary: left minus right
//! atom := word | "(" or ")"
//! ```
//!
//! Operators are recognised only in upper case. A word that tokenizes to
//! several terms (`ACE-inhibitor`) becomes the conjunction of those terms; a
//! word with no terms (`--`) is dropped.

use super::tokenize::tokenize;
use super::KnowledgeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Term(String),
    And(Vec<Query>),
    Or(Vec<Query>),
    Not(Box<Query>, Box<Query>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lexeme {
    Word(String),
    And,
    Or,
    Not,
    Open,
    Close,
}

fn lex(input: &str) -> Vec<Lexeme> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<Lexeme>| {
        if word.is_empty() {
            return;
        }
        out.push(match word.as_str() {
            "AND" => Lexeme::And,
            "OR" => Lexeme::Or,
            "NOT" => Lexeme::Not,
            _ => Lexeme::Word(word.clone()),
        });
        word.clear();
    };
    for c in input.chars() {
        match c {
            '(' | ')' => {
                flush(&mut word, &mut out);
                out.push(if c == '(' { Lexeme::Open } else { Lexeme::Close });
            }
            c if c.is_whitespace() => flush(&mut word, &mut out),
            c => word.push(c),
        }
    }
    flush(&mut word, &mut out);
    out
}

struct Parser {
    lexemes: Vec<Lexeme>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexeme> {
        self.lexemes.get(self.pos)
    }

    fn err(&self, msg: &str) -> KnowledgeError {
        KnowledgeError::QuerySyntax(format!("{msg} at token {}", self.pos))
    }

    fn or(&mut self) -> Result<Query, KnowledgeError> {
        let mut parts = vec![self.and()?];
        while self.peek() == Some(&Lexeme::Or) {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(collapse(parts, Query::Or))
    }

    fn and(&mut self) -> Result<Query, KnowledgeError> {
        let mut parts = vec![self.not()?];
        loop {
            match self.peek() {
                Some(Lexeme::And) => {
                    self.pos += 1;
                    parts.push(self.not()?);
                }
                Some(Lexeme::Word(_)) | Some(Lexeme::Open) => parts.push(self.not()?),
                _ => break,
            }
        }
        Ok(collapse(parts, Query::And))
    }

    fn not(&mut self) -> Result<Query, KnowledgeError> {
        let mut left = self.atom()?;
        while self.peek() == Some(&Lexeme::Not) {
            self.pos += 1;
            let right = self.atom()?;
            left = Query::Not(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn atom(&mut self) -> Result<Query, KnowledgeError> {
        match self.peek().cloned() {
            Some(Lexeme::Word(w)) => {
                self.pos += 1;
                let terms: Vec<Query> = tokenize(&w).into_iter().map(Query::Term).collect();
                if terms.is_empty() {
                    return Err(self.err(&format!("word {w:?} has no searchable terms")));
                }
                Ok(collapse(terms, Query::And))
            }
            Some(Lexeme::Open) => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(&Lexeme::Close) {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Lexeme::Close) => Err(self.err("unexpected ')'")),
            Some(_) => Err(self.err("operator without left operand")),
            None => Err(self.err("unexpected end of query")),
        }
    }
}

fn collapse(mut parts: Vec<Query>, wrap: fn(Vec<Query>) -> Query) -> Query {
    if parts.len() == 1 {
        parts.pop().expect("one element")
    } else {
        wrap(parts)
    }
}

/// Parses a query string. Empty queries and dangling operators or
/// parentheses are syntax errors.
pub fn parse(input: &str) -> Result<Query, KnowledgeError> {
    // Words with no searchable content are dropped before parsing.
    let lexemes: Vec<Lexeme> = lex(input)
        .into_iter()
        .filter(|l| !matches!(l, Lexeme::Word(w) if tokenize(w).is_empty()))
        .collect();
    if lexemes.is_empty() {
        return Err(KnowledgeError::QuerySyntax("empty query".into()));
    }
    let mut p = Parser { lexemes, pos: 0 };
    let q = p.or()?;
    if p.pos != p.lexemes.len() {
        return Err(p.err("trailing input"));
    }
    Ok(q)
}

impl Query {
    /// Terms that contribute to the score: every term not on the right-hand
    /// side of a `NOT`. Sorted and deduplicated.
    pub fn positive_terms(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_positive(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_positive(&self, out: &mut Vec<String>) {
        match self {
            Query::Term(t) => out.push(t.clone()),
            Query::And(qs) | Query::Or(qs) => qs.iter().for_each(|q| q.collect_positive(out)),
            Query::Not(l, _) => l.collect_positive(out),
        }
    }

    /// Evaluates the expression against a predicate saying whether a term is
    /// present in the document.
    pub fn matches(&self, has: &impl Fn(&str) -> bool) -> bool {
        match self {
            Query::Term(t) => has(t),
            Query::And(qs) => qs.iter().all(|q| q.matches(has)),
            Query::Or(qs) => qs.iter().any(|q| q.matches(has)),
            Query::Not(l, r) => l.matches(has) && !r.matches(has),
        }
    }
}
