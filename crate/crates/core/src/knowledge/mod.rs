//! Full-text passage store with BM25 ranking, boolean queries and
//! highlighted snippets.

mod porter;
pub mod query;
mod tokenize;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use porter::stem;
pub use query::Query;
pub use tokenize::{tokenize, tokenize_spans, Token};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;
/// Maximum snippet window, in characters of source text.
pub const SNIPPET_CHARS: usize = 240;
/// Characters of leading context kept before the first match.
const SNIPPET_LEAD: usize = 40;
const INDEX_MAGIC: &str = "clinigym-index/1";

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDoc(String),
    #[error("passage {0:?} has empty content")]
    EmptyContent(String),
    #[error("query syntax: {0}")]
    QuerySyntax(String),
    #[error("unknown doc_id {0:?}")]
    NotFound(String),
    #[error("corpus line {line}: {source}")]
    BadRecord { line: usize, source: serde_json::Error },
    #[error("index file: {0}")]
    BadIndex(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub title: String,
    pub content: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub dataset_name: String,
}

impl Passage {
    /// Text that is indexed: title then content.
    pub fn indexed_text(&self) -> String {
        if self.title.is_empty() {
            self.content.clone()
        } else {
            format!("{}\n{}", self.title, self.content)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub passage_count: usize,
    pub distinct_terms: usize,
    /// Mean document length in tokens; 0 for an empty index.
    pub average_doc_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: f64,
    pub snippet: String,
}

/// In-memory inverted index. Immutable once built; share it behind an `Arc`
/// for concurrent readers.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KnowledgeIndex {
    passages: Vec<Passage>,
    doc_len: Vec<u32>,
    total_len: u64,
    by_id: BTreeMap<String, usize>,
    /// term -> (doc, term frequency), docs ascending.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    magic: String,
    index: KnowledgeIndex,
}

/// BM25 inverse document frequency, `ln(1 + (N - n + 0.5) / (n + 0.5))`.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Per-term BM25 contribution.
pub fn term_score(idf: f64, tf: f64, doc_len: f64, avg_len: f64) -> f64 {
    idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * doc_len / avg_len))
}

impl KnowledgeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an index from a passage stream.
    pub fn build(passages: impl IntoIterator<Item = Passage>) -> Result<Self, KnowledgeError> {
        let mut idx = Self::new();
        idx.ingest(passages)?;
        Ok(idx)
    }

    /// Adds passages. On error nothing is added.
    pub fn ingest(
        &mut self,
        passages: impl IntoIterator<Item = Passage>,
    ) -> Result<IndexStats, KnowledgeError> {
        let batch: Vec<Passage> = passages.into_iter().collect();
        let mut seen = std::collections::BTreeSet::new();
        for p in &batch {
            if self.by_id.contains_key(&p.doc_id) || !seen.insert(p.doc_id.as_str()) {
                return Err(KnowledgeError::DuplicateDoc(p.doc_id.clone()));
            }
            if p.content.trim().is_empty() {
                return Err(KnowledgeError::EmptyContent(p.doc_id.clone()));
            }
        }
        for p in batch {
            let doc = self.passages.len() as u32;
            let terms = tokenize(&p.indexed_text());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &terms {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, n) in tf {
                self.postings.entry(term).or_default().push((doc, n));
            }
            self.doc_len.push(terms.len() as u32);
            self.total_len += terms.len() as u64;
            self.by_id.insert(p.doc_id.clone(), doc as usize);
            self.passages.push(p);
        }
        Ok(self.stats())
    }

    /// Reads JSONL passages. Blank lines are skipped.
    pub fn ingest_jsonl(&mut self, reader: impl BufRead) -> Result<IndexStats, KnowledgeError> {
        let mut batch = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: Passage = serde_json::from_str(&line)
                .map_err(|source| KnowledgeError::BadRecord { line: i + 1, source })?;
            batch.push(p);
        }
        self.ingest(batch)
    }

    pub fn stats(&self) -> IndexStats {
        let n = self.passages.len();
        IndexStats {
            passage_count: n,
            distinct_terms: self.postings.len(),
            average_doc_length: if n == 0 { 0.0 } else { self.total_len as f64 / n as f64 },
        }
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn get(&self, doc_id: &str) -> Option<&Passage> {
        self.by_id.get(doc_id).map(|&i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    fn tf(&self, term: &str, doc: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&doc, |&(d, _)| d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    /// Top-`k` passages for a boolean query.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, KnowledgeError> {
        self.search_where(query, k, |_| true)
    }

    /// Like [`search`](Self::search) but only over passages accepted by
    /// `filter`. Statistics (idf, average length) stay corpus-wide.
    pub fn search_where(
        &self,
        query: &str,
        k: usize,
        filter: impl Fn(&Passage) -> bool,
    ) -> Result<Vec<SearchHit>, KnowledgeError> {
        let q = query::parse(query)?;
        if self.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let positive = q.positive_terms();
        let n = self.passages.len();
        let avg = self.total_len as f64 / n as f64;
        let weights: Vec<(&str, f64)> = positive
            .iter()
            .map(|t| {
                let df = self.postings.get(t).map_or(0, Vec::len);
                (t.as_str(), idf(n, df))
            })
            .collect();

        // Candidates are docs containing at least one positive term; a doc
        // with none can never satisfy the expression.
        let mut candidates: Vec<u32> = positive
            .iter()
            .filter_map(|t| self.postings.get(t))
            .flat_map(|p| p.iter().map(|&(d, _)| d))
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        let mut hits: Vec<(f64, u32)> = Vec::new();
        for doc in candidates {
            if !filter(&self.passages[doc as usize]) {
                continue;
            }
            if !q.matches(&|t: &str| self.tf(t, doc) > 0) {
                continue;
            }
            let dl = self.doc_len[doc as usize] as f64;
            let score: f64 = weights
                .iter()
                .map(|&(t, w)| term_score(w, self.tf(t, doc) as f64, dl, avg))
                .sum();
            hits.push((score, doc));
        }
        hits.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.passages[a.1 as usize].doc_id.cmp(&self.passages[b.1 as usize].doc_id))
        });
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(score, doc)| {
                let p = &self.passages[doc as usize];
                SearchHit {
                    doc_id: p.doc_id.clone(),
                    score,
                    snippet: highlight(&p.content, &positive),
                }
            })
            .collect())
    }

    /// Highlighted window of a passage's content for `query`.
    pub fn snippet(&self, doc_id: &str, query: &str) -> Result<String, KnowledgeError> {
        let p = self.get(doc_id).ok_or_else(|| KnowledgeError::NotFound(doc_id.into()))?;
        let terms = query::parse(query)?.positive_terms();
        Ok(highlight(&p.content, &terms))
    }

    pub fn save(&self, path: &Path) -> Result<(), KnowledgeError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        let doc = IndexFile { magic: INDEX_MAGIC.into(), index: self.clone() };
        serde_json::to_writer(&mut w, &doc).map_err(|e| KnowledgeError::BadIndex(e.to_string()))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let file = std::fs::File::open(path)?;
        let doc: IndexFile = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| KnowledgeError::BadIndex(e.to_string()))?;
        if doc.magic != INDEX_MAGIC {
            return Err(KnowledgeError::BadIndex(format!("bad magic {:?}", doc.magic)));
        }
        Ok(doc.index)
    }
}

/// Byte offset `n` characters after `from` (clamped to the end).
fn advance_chars(text: &str, from: usize, n: usize) -> usize {
    text[from..].char_indices().nth(n).map_or(text.len(), |(i, _)| from + i)
}

/// Byte offset `n` characters before `to` (clamped to the start).
fn retreat_chars(text: &str, to: usize, n: usize) -> usize {
    if n == 0 {
        return to;
    }
    text[..to].char_indices().rev().nth(n - 1).map_or(0, |(i, _)| i)
}

/// Window of at most [`SNIPPET_CHARS`] characters anchored on the first
/// token whose stem is in `terms`, with every matching token wrapped in
/// `[...]`. Without a match, the leading window is returned unmarked.
pub fn highlight(content: &str, terms: &[String]) -> String {
    let spans: Vec<Token> = tokenize_spans(content)
        .into_iter()
        .filter(|t| terms.iter().any(|q| q == &t.term))
        .collect();
    let Some(first) = spans.first() else {
        return content[..advance_chars(content, 0, SNIPPET_CHARS)].to_string();
    };
    let start = retreat_chars(content, first.start, SNIPPET_LEAD);
    let end = advance_chars(content, start, SNIPPET_CHARS);
    let mut out = String::new();
    let mut at = start;
    for s in spans.iter().filter(|s| s.start >= start && s.end <= end) {
        out.push_str(&content[at..s.start]);
        out.push('[');
        out.push_str(&content[s.start..s.end]);
        out.push(']');
        at = s.end;
    }
    out.push_str(&content[at..end]);
    out
}
