//! Hybrid lexical + embedding search over chunks, filterable by domain tag.

mod fusion;
mod lexical;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Chunk, DomainTag};
use crate::text::analyze;

pub use fusion::{fuse, RRF_K};
pub use lexical::{bm25_idf, bm25_weight, query_terms, tfidf_idf, TermScorer, BM25_B, BM25_K1};
pub use store::{build_index, embed_chunks, IndexManifest, SharedIndex};

pub const DEFAULT_FUSION_DEPTH: usize = 50;
pub const DEFAULT_EMBEDDING_DIM: usize = 384;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("query has no searchable terms")]
    EmptyQuery,
    #[error("index holds no embedded chunks")]
    NoEmbeddedChunks,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("index file is malformed: {0}")]
    Malformed(String),
    #[error("embedding failed: {0}")]
    Embed(#[from] crate::gateway::GatewayError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub term_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vector_rank: Option<usize>,
}

impl SearchHit {
    fn unranked(chunk_id: &str) -> Self {
        SearchHit {
            chunk_id: chunk_id.to_owned(),
            score: 0.0,
            term_rank: None,
            vector_rank: None,
        }
    }
}

/// Non-increasing score, ties by chunk id.
pub(crate) fn sort_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexStats {
    pub num_chunks: usize,
    pub num_terms: usize,
    pub embedding_dim: Option<usize>,
    pub per_tag: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub scorer: TermScorer,
    pub fusion_depth: usize,
    pub rrf_k: f64,
    /// Fixed up front, or taken from the first embedded chunk when `None`.
    pub embedding_dim: Option<usize>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            scorer: TermScorer::default(),
            fusion_depth: DEFAULT_FUSION_DEPTH,
            rrf_k: RRF_K,
            embedding_dim: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Term,
    Vector,
    Hybrid,
}

#[derive(Debug, Clone)]
struct Entry {
    chunk: Chunk,
    terms: BTreeMap<String, u32>,
    len: usize,
    emb_norm: f64,
}

impl Entry {
    fn matches(&self, filter: Option<&BTreeSet<DomainTag>>) -> bool {
        filter.is_none_or(|tags| self.chunk.domain_tags.iter().any(|t| tags.contains(t)))
    }
}

/// In-process index. Reads take `&self`; use [`SharedIndex`] for
/// snapshot-isolated concurrent access.
#[derive(Debug, Clone, Default)]
pub struct HybridIndex {
    config: IndexConfig,
    entries: Vec<Entry>,
    slots: HashMap<String, usize>,
    postings: HashMap<String, BTreeMap<usize, u32>>,
    total_len: usize,
    embedded: usize,
}

impl HybridIndex {
    pub fn new(config: IndexConfig) -> Self {
        HybridIndex {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn set_scorer(&mut self, scorer: TermScorer) {
        self.config.scorer = scorer;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.config.embedding_dim
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.slots.get(chunk_id).map(|&s| &self.entries[s].chunk)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.entries.iter().map(|e| &e.chunk)
    }

    pub fn stats(&self) -> IndexStats {
        let mut per_tag = BTreeMap::new();
        for e in &self.entries {
            for t in &e.chunk.domain_tags {
                *per_tag.entry(t.to_string()).or_insert(0) += 1;
            }
        }
        IndexStats {
            num_chunks: self.entries.len(),
            num_terms: self.postings.len(),
            embedding_dim: self.config.embedding_dim,
            per_tag,
        }
    }

    /// Adds or replaces chunks by id. The batch is rejected whole on a
    /// dimension conflict.
    pub fn upsert_chunks(&mut self, chunks: Vec<Chunk>) -> Result<usize, IndexError> {
        let mut dim = self.config.embedding_dim;
        for emb in chunks.iter().filter_map(|c| c.embedding.as_ref()) {
            match dim {
                Some(d) if d != emb.len() => {
                    return Err(IndexError::DimMismatch {
                        expected: d,
                        got: emb.len(),
                    })
                }
                _ => dim = Some(emb.len()),
            }
        }
        self.config.embedding_dim = dim;
        let count = chunks.len();
        for chunk in chunks {
            self.insert(chunk);
        }
        Ok(count)
    }

    fn insert(&mut self, chunk: Chunk) {
        let tokens = analyze(&chunk.text);
        let len = tokens.len();
        let mut terms = BTreeMap::new();
        for t in tokens {
            *terms.entry(t).or_insert(0u32) += 1;
        }
        let emb_norm = chunk
            .embedding
            .as_ref()
            .map(|e| norm(e))
            .unwrap_or(0.0);
        let entry = Entry {
            chunk,
            terms,
            len,
            emb_norm,
        };
        let slot = match self.slots.get(&entry.chunk.chunk_id) {
            Some(&slot) => {
                self.remove_postings(slot);
                slot
            }
            None => {
                let slot = self.entries.len();
                self.slots.insert(entry.chunk.chunk_id.clone(), slot);
                self.entries.push(entry.clone());
                slot
            }
        };
        for (term, &tf) in &entry.terms {
            self.postings.entry(term.clone()).or_default().insert(slot, tf);
        }
        self.total_len += entry.len;
        if entry.chunk.embedding.is_some() {
            self.embedded += 1;
        }
        self.entries[slot] = entry;
    }

    fn remove_postings(&mut self, slot: usize) {
        let old = &self.entries[slot];
        for term in old.terms.keys() {
            if let Some(list) = self.postings.get_mut(term) {
                list.remove(&slot);
                if list.is_empty() {
                    self.postings.remove(term);
                }
            }
        }
        self.total_len -= old.len;
        if old.chunk.embedding.is_some() {
            self.embedded -= 1;
        }
    }

    pub fn term_search(
        &self,
        query: &str,
        tags: Option<&BTreeSet<DomainTag>>,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let terms = query_terms(analyze(query));
        if terms.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let n = self.entries.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut acc: HashMap<usize, f64> = HashMap::new();
        match self.config.scorer {
            TermScorer::Bm25 { k1, b } => {
                let avg_len = self.total_len as f64 / n as f64;
                for (term, _) in &terms {
                    let Some(list) = self.postings.get(term) else { continue };
                    let idf = bm25_idf(n, list.len());
                    for (&slot, &tf) in list {
                        let e = &self.entries[slot];
                        if e.matches(tags) {
                            *acc.entry(slot).or_insert(0.0) += bm25_weight(tf, idf, e.len, avg_len, k1, b);
                        }
                    }
                }
            }
            TermScorer::TfIdfCosine => {
                let mut q_sq = 0.0;
                for (term, qtf) in &terms {
                    let df = self.postings.get(term).map_or(0, BTreeMap::len);
                    let q_w = f64::from(*qtf) * tfidf_idf(n, df);
                    q_sq += q_w * q_w;
                    let Some(list) = self.postings.get(term) else { continue };
                    for (&slot, &tf) in list {
                        if self.entries[slot].matches(tags) {
                            *acc.entry(slot).or_insert(0.0) += q_w * (f64::from(tf) * tfidf_idf(n, df));
                        }
                    }
                }
                let q_norm = q_sq.sqrt();
                for (slot, score) in acc.iter_mut() {
                    *score /= q_norm * self.tfidf_norm(*slot);
                }
            }
        }
        let mut hits: Vec<SearchHit> = acc
            .into_iter()
            .map(|(slot, score)| SearchHit {
                score,
                ..SearchHit::unranked(&self.entries[slot].chunk.chunk_id)
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        for (i, h) in hits.iter_mut().enumerate() {
            h.term_rank = Some(i + 1);
        }
        Ok(hits)
    }

    fn tfidf_norm(&self, slot: usize) -> f64 {
        let n = self.entries.len();
        self.entries[slot]
            .terms
            .iter()
            .map(|(term, &tf)| {
                let w = f64::from(tf) * tfidf_idf(n, self.postings[term].len());
                w * w
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn vector_search(
        &self,
        query_embedding: &[f32],
        tags: Option<&BTreeSet<DomainTag>>,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.embedded == 0 {
            return Err(IndexError::NoEmbeddedChunks);
        }
        if let Some(d) = self.config.embedding_dim {
            if d != query_embedding.len() {
                return Err(IndexError::DimMismatch {
                    expected: d,
                    got: query_embedding.len(),
                });
            }
        }
        let q_norm = norm(query_embedding);
        let mut hits: Vec<SearchHit> = self
            .entries
            .iter()
            .filter(|e| e.matches(tags))
            .filter_map(|e| {
                let emb = e.chunk.embedding.as_ref()?;
                let denom = q_norm * e.emb_norm;
                let score = if denom == 0.0 { 0.0 } else { dot(query_embedding, emb) / denom };
                Some(SearchHit {
                    score,
                    ..SearchHit::unranked(&e.chunk.chunk_id)
                })
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        for (i, h) in hits.iter_mut().enumerate() {
            h.vector_rank = Some(i + 1);
        }
        Ok(hits)
    }

    /// Reciprocal-rank fusion of term and vector candidates, both filtered
    /// by tag before fusion and truncated at the fusion depth. Without a
    /// query embedding, or with no embedded chunks, only the term list
    /// contributes.
    pub fn hybrid_search(
        &self,
        query: &str,
        query_embedding: Option<&[f32]>,
        tags: Option<&BTreeSet<DomainTag>>,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let depth = self.config.fusion_depth.max(1);
        let term = self.term_search(query, tags, depth)?;
        let vector = match query_embedding {
            Some(q) => match self.vector_search(q, tags, depth) {
                Ok(v) => v,
                Err(IndexError::NoEmbeddedChunks) => Vec::new(),
                Err(e) => return Err(e),
            },
            None => Vec::new(),
        };
        let mut fused = fuse(&term, &vector, self.config.rrf_k);
        fused.truncate(k);
        Ok(fused)
    }

    pub fn search(
        &self,
        mode: SearchMode,
        query: &str,
        query_embedding: Option<&[f32]>,
        tags: Option<&BTreeSet<DomainTag>>,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        match (mode, query_embedding) {
            (SearchMode::Term, _) => self.term_search(query, tags, k),
            (SearchMode::Vector, Some(q)) => self.vector_search(q, tags, k),
            (SearchMode::Vector, None) => Err(IndexError::NoEmbeddedChunks),
            (SearchMode::Hybrid, q) => self.hybrid_search(query, q, tags, k),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}
