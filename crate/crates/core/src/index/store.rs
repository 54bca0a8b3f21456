//! Snapshot-isolated sharing and on-disk persistence of a [`HybridIndex`].
//!
//! The index persists as `manifest.json` plus `chunks.jsonl` under
//! `<corpus-dir>/index/`; postings are rebuilt on load.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{HybridIndex, IndexConfig, IndexError};
use crate::corpus::{Chunk, ChunkParams, Corpus};
use crate::gateway::{Embedder, EmbedderSpec};

const MANIFEST: &str = "manifest.json";
const CHUNKS: &str = "chunks.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub config: IndexConfig,
    #[serde(default)]
    pub embedder: Option<EmbedderSpec>,
    pub window_tokens: usize,
    pub overlap_tokens: usize,
}

impl HybridIndex {
    pub fn save(&self, dir: &Path, manifest: &IndexManifest) -> Result<(), IndexError> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{CHUNKS}.tmp"));
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for chunk in self.chunks() {
                serde_json::to_writer(&mut out, chunk).map_err(std::io::Error::other)?;
                out.write_all(b"\n")?;
            }
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, dir.join(CHUNKS))?;
        let manifest = IndexManifest {
            config: *self.config(),
            ..manifest.clone()
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        fs::write(dir.join(MANIFEST), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(HybridIndex, IndexManifest), IndexError> {
        let manifest: IndexManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)
            .map_err(|e| IndexError::Malformed(format!("{MANIFEST}: {e}")))?;
        let mut chunks = Vec::new();
        for (n, line) in BufReader::new(File::open(dir.join(CHUNKS))?).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let chunk: Chunk = serde_json::from_str(&line)
                .map_err(|e| IndexError::Malformed(format!("{CHUNKS}:{}: {e}", n + 1)))?;
            chunks.push(chunk);
        }
        let mut index = HybridIndex::new(manifest.config);
        index.upsert_chunks(chunks)?;
        Ok((index, manifest))
    }
}

const EMBED_BATCH: usize = 64;

/// Fills in chunk embeddings, batching requests to the embedder.
pub fn embed_chunks(chunks: &mut [Chunk], embedder: &dyn Embedder) -> Result<(), IndexError> {
    for batch in chunks.chunks_mut(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
        for (chunk, emb) in batch.iter_mut().zip(embedder.embed(&texts)?) {
            chunk.embedding = Some(emb);
        }
    }
    Ok(())
}

/// Chunks every document of `corpus`, embeds the chunks when an embedder is
/// given, and indexes them.
pub fn build_index(
    corpus: &Corpus,
    embedder: Option<&dyn Embedder>,
    params: ChunkParams,
    config: IndexConfig,
) -> Result<(HybridIndex, IndexManifest), IndexError> {
    let mut chunks = corpus.chunk_all(params)?;
    if let Some(e) = embedder {
        embed_chunks(&mut chunks, e)?;
    }
    let mut config = config;
    if let Some(e) = embedder {
        config.embedding_dim = Some(e.dim());
    }
    let mut index = HybridIndex::new(config);
    index.upsert_chunks(chunks)?;
    let manifest = IndexManifest {
        config,
        embedder: embedder.map(|e| e.spec()),
        window_tokens: params.window_tokens,
        overlap_tokens: params.overlap_tokens,
    };
    Ok((index, manifest))
}

/// Many readers, one writer. Readers hold an `Arc` snapshot, so a search
/// that began before an upsert keeps seeing the pre-upsert index.
#[derive(Debug)]
pub struct SharedIndex {
    current: RwLock<Arc<HybridIndex>>,
    writer: Mutex<()>,
}

impl SharedIndex {
    pub fn new(index: HybridIndex) -> Self {
        SharedIndex {
            current: RwLock::new(Arc::new(index)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<HybridIndex> {
        self.current.read().clone()
    }

    pub fn upsert_chunks(&self, chunks: Vec<Chunk>) -> Result<usize, IndexError> {
        let _guard = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        let n = next.upsert_chunks(chunks)?;
        *self.current.write() = Arc::new(next);
        Ok(n)
    }
}

impl Default for SharedIndex {
    fn default() -> Self {
        SharedIndex::new(HybridIndex::new(IndexConfig::default()))
    }
}
