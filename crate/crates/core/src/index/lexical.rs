//! Term-statistics scorers.

use serde::{Deserialize, Serialize};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermScorer {
    Bm25 { k1: f64, b: f64 },
    /// Cosine between smoothed TF-IDF vectors of query and chunk.
    TfIdfCosine,
}

impl Default for TermScorer {
    fn default() -> Self {
        TermScorer::Bm25 {
            k1: BM25_K1,
            b: BM25_B,
        }
    }
}

/// Lucene-style BM25 idf; always positive.
pub fn bm25_idf(num_chunks: usize, df: usize) -> f64 {
    let n = num_chunks as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn bm25_weight(tf: u32, idf: f64, chunk_len: usize, avg_len: f64, k1: f64, b: f64) -> f64 {
    let tf = f64::from(tf);
    idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * chunk_len as f64 / avg_len))
}

/// Smoothed idf, `ln((1 + n) / (1 + df)) + 1`.
pub fn tfidf_idf(num_chunks: usize, df: usize) -> f64 {
    ((1.0 + num_chunks as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Unique query terms in first-occurrence order, with their counts.
pub fn query_terms(terms: Vec<String>) -> Vec<(String, u32)> {
    let mut out: Vec<(String, u32)> = Vec::new();
    for term in terms {
        match out.iter_mut().find(|(t, _)| *t == term) {
            Some((_, n)) => *n += 1,
            None => out.push((term, 1)),
        }
    }
    out
}
