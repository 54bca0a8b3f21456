//! Shared unit-test fixtures.

use std::sync::Arc;

use crate::corpus::{ChunkParams, Corpus, Document, TagVocabulary};
use crate::gateway::{Embedder, Gateway, HashEmbedder, MockBackend};
use crate::index::{build_index, HybridIndex, IndexConfig};

pub fn vocab() -> TagVocabulary {
    TagVocabulary::default()
}

pub fn corpus3() -> Corpus {
    let mut c = Corpus::in_memory(vocab());
    for doc in [
        Document::new(
            "bio-1",
            "CRISPR screens",
            "Pooled CRISPR knockout screens identify essential genes in cancer cell lines.",
        )
        .with_tags(["biology"]),
        Document::new(
            "cs-1",
            "Attention",
            "Transformer attention layers weigh token interactions for sequence modeling.",
        )
        .with_tags(["computer-science-and-engineering"]),
        Document::new(
            "med-1",
            "Kinase inhibitors",
            "Kinase inhibitors block tumor signaling and are screened against cancer cell lines.",
        )
        .with_tags(["medicine"]),
    ] {
        c.ingest_document(doc).unwrap();
    }
    c
}

pub fn embedder() -> Arc<dyn Embedder> {
    Arc::new(HashEmbedder::new(64, 1))
}

pub fn index_for(corpus: &Corpus) -> Arc<HybridIndex> {
    let e = embedder();
    Arc::new(build_index(corpus, Some(e.as_ref()), ChunkParams::default(), IndexConfig::default()).unwrap().0)
}

pub fn gateway(mock: MockBackend) -> (Arc<Gateway>, Arc<MockBackend>) {
    let mock = Arc::new(mock);
    let gw = Gateway::new(mock.clone()).with_retry_budget(0).with_backoff(std::time::Duration::ZERO);
    (Arc::new(gw), mock)
}
