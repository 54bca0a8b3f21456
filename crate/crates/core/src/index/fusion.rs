//! Reciprocal rank fusion of a term ranking and a vector ranking.

use std::collections::BTreeMap;

use super::SearchHit;

pub const RRF_K: f64 = 60.0;

/// Fuses two rankings. Each chunk scores `Σ 1/(rrf_k + rank)` over the lists
/// that contain it; output is sorted by score, then chunk id.
pub fn fuse(term: &[SearchHit], vector: &[SearchHit], rrf_k: f64) -> Vec<SearchHit> {
    let mut acc: BTreeMap<&str, SearchHit> = BTreeMap::new();
    for (i, hit) in term.iter().enumerate() {
        let rank = i + 1;
        let entry = acc.entry(&hit.chunk_id).or_insert_with(|| SearchHit::unranked(&hit.chunk_id));
        entry.term_rank = Some(rank);
        entry.score += 1.0 / (rrf_k + rank as f64);
    }
    for (i, hit) in vector.iter().enumerate() {
        let rank = i + 1;
        let entry = acc.entry(&hit.chunk_id).or_insert_with(|| SearchHit::unranked(&hit.chunk_id));
        entry.vector_rank = Some(rank);
        entry.score += 1.0 / (rrf_k + rank as f64);
    }
    let mut hits: Vec<SearchHit> = acc.into_values().collect();
    super::sort_hits(&mut hits);
    hits
}
