//! Document ingestion, domain tagging, chunking and on-disk persistence.
//!
//! A corpus directory holds `tags.txt` (the tag vocabulary) and
//! `documents.jsonl`, an append-only log of ingest and retag records that is
//! replayed on open.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_tokens;

pub const DEFAULT_WINDOW_TOKENS: usize = 512;
pub const DEFAULT_OVERLAP_TOKENS: usize = 64;

const DEFAULT_VOCABULARY: &str = include_str!("../config/tags.txt");
const LOG_FILE: &str = "documents.jsonl";
const VOCAB_FILE: &str = "tags.txt";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document id {0:?} already present")]
    DuplicateId(String),
    #[error("document {0:?} has an empty body")]
    EmptyBody(String),
    #[error("document id must be non-empty")]
    EmptyId,
    #[error("unknown document {0:?}")]
    UnknownDoc(String),
    #[error("unknown domain tag {0:?}")]
    UnknownTag(String),
    #[error("overlap {overlap} must be smaller than window {window}")]
    BadWindow { window: usize, overlap: usize },
    #[error("no line of {path} could be ingested ({rejected} rejected)")]
    FormatError { path: String, rejected: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Lowercase corpus partition label such as `biology`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainTag(String);

impl DomainTag {
    pub fn new(name: impl AsRef<str>) -> Self {
        DomainTag(name.as_ref().trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DomainTag {
    fn from(value: &str) -> Self {
        DomainTag::new(value)
    }
}

/// The closed set of tags a corpus accepts, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: Vec<DomainTag>,
}

impl TagVocabulary {
    pub fn new<I, T>(tags: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        let tags = tags
            .into_iter()
            .map(DomainTag::new)
            .filter(|t| !t.as_str().is_empty() && seen.insert(t.clone()))
            .collect();
        TagVocabulary { tags }
    }

    /// Parses one tag per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        TagVocabulary::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn contains(&self, tag: &DomainTag) -> bool {
        self.tags.contains(tag)
    }

    pub fn tags(&self) -> &[DomainTag] {
        &self.tags
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Validates `names` against the vocabulary.
    pub fn resolve<I, T>(&self, names: I) -> Result<BTreeSet<DomainTag>, CorpusError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        names
            .into_iter()
            .map(|n| {
                let tag = DomainTag::new(n);
                if self.contains(&tag) {
                    Ok(tag)
                } else {
                    Err(CorpusError::UnknownTag(tag.0))
                }
            })
            .collect()
    }

    fn render(&self) -> String {
        self.tags.iter().map(|t| format!("{t}\n")).collect()
    }
}

impl Default for TagVocabulary {
    fn default() -> Self {
        Self::parse(DEFAULT_VOCABULARY)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub domain_tags: BTreeSet<DomainTag>,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
            domain_tags: BTreeSet::new(),
            source_meta: BTreeMap::new(),
        }
    }

    pub fn with_tags<I, T>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        self.domain_tags = tags.into_iter().map(DomainTag::new).collect();
        self
    }
}

/// Half-open token range `[start, end)` of a chunk within its document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub token_span: Span,
    pub domain_tags: BTreeSet<DomainTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    pub window_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            window_tokens: DEFAULT_WINDOW_TOKENS,
            overlap_tokens: DEFAULT_OVERLAP_TOKENS,
        }
    }
}

/// Token spans tiling `[0, len)` with stride `window - overlap`.
pub fn chunk_spans(len: usize, params: ChunkParams) -> Result<Vec<Span>, CorpusError> {
    let ChunkParams {
        window_tokens: window,
        overlap_tokens: overlap,
    } = params;
    if window == 0 || overlap >= window {
        return Err(CorpusError::BadWindow { window, overlap });
    }
    let stride = window - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + window).min(len);
        spans.push(Span { start, end });
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

/// A line-level problem found while ingesting JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub ingested: usize,
    pub diagnostics: Vec<Diagnostic>,
}

impl LoadReport {
    pub fn rejected(&self) -> usize {
        self.diagnostics.len()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    Ingest { doc: Document },
    Retag { doc_id: String, tags: BTreeSet<DomainTag> },
}

/// Document collection, optionally backed by a corpus directory.
#[derive(Debug)]
pub struct Corpus {
    dir: Option<PathBuf>,
    vocabulary: TagVocabulary,
    docs: IndexMap<String, Document>,
}

impl Corpus {
    pub fn in_memory(vocabulary: TagVocabulary) -> Self {
        Corpus {
            dir: None,
            vocabulary,
            docs: IndexMap::new(),
        }
    }

    /// Opens (creating if needed) a corpus directory and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let vocab_path = dir.join(VOCAB_FILE);
        let vocabulary = if vocab_path.exists() {
            TagVocabulary::load(&vocab_path)?
        } else {
            let vocab = TagVocabulary::default();
            fs::write(&vocab_path, vocab.render())?;
            vocab
        };
        let mut corpus = Corpus {
            dir: Some(dir.clone()),
            vocabulary,
            docs: IndexMap::new(),
        };
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogRecord>(&line) {
                    Ok(LogRecord::Ingest { doc }) => {
                        corpus.docs.insert(doc.doc_id.clone(), doc);
                    }
                    Ok(LogRecord::Retag { doc_id, tags }) => {
                        if let Some(doc) = corpus.docs.get_mut(&doc_id) {
                            doc.domain_tags = tags;
                        }
                    }
                    // A torn final line from an interrupted append.
                    Err(e) => log::warn!("{}:{}: skipping log record: {e}", log_path.display(), n + 1),
                }
            }
        }
        Ok(corpus)
    }

    pub fn with_vocabulary(mut self, vocabulary: TagVocabulary) -> Result<Self, CorpusError> {
        if let Some(dir) = &self.dir {
            fs::write(dir.join(VOCAB_FILE), vocabulary.render())?;
        }
        self.vocabulary = vocabulary;
        Ok(self)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.get(doc_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    pub fn ingest_document(&mut self, record: Document) -> Result<String, CorpusError> {
        if record.doc_id.trim().is_empty() {
            return Err(CorpusError::EmptyId);
        }
        if word_tokens(&record.body).is_empty() {
            return Err(CorpusError::EmptyBody(record.doc_id));
        }
        if self.docs.contains_key(&record.doc_id) {
            return Err(CorpusError::DuplicateId(record.doc_id));
        }
        for tag in &record.domain_tags {
            if !self.vocabulary.contains(tag) {
                return Err(CorpusError::UnknownTag(tag.0.clone()));
            }
        }
        let doc_id = record.doc_id.clone();
        self.append_log(&LogRecord::Ingest { doc: record.clone() })?;
        self.docs.insert(doc_id.clone(), record);
        Ok(doc_id)
    }

    /// Replaces a document's tag set. The set must be non-empty.
    pub fn tag_domains<I, T>(&mut self, doc_id: &str, tags: I) -> Result<&Document, CorpusError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        if !self.docs.contains_key(doc_id) {
            return Err(CorpusError::UnknownDoc(doc_id.to_owned()));
        }
        let tags = self.vocabulary.resolve(tags)?;
        if tags.is_empty() {
            return Err(CorpusError::UnknownTag("empty".into()));
        }
        self.append_log(&LogRecord::Retag {
            doc_id: doc_id.to_owned(),
            tags: tags.clone(),
        })?;
        let doc = self.docs.get_mut(doc_id).expect("checked above");
        doc.domain_tags = tags;
        Ok(doc)
    }

    pub fn chunk_document(&self, doc_id: &str, params: ChunkParams) -> Result<Vec<Chunk>, CorpusError> {
        let doc = self
            .docs
            .get(doc_id)
            .ok_or_else(|| CorpusError::UnknownDoc(doc_id.to_owned()))?;
        let tokens = word_tokens(&doc.body);
        let spans = chunk_spans(tokens.len(), params)?;
        Ok(spans
            .into_iter()
            .enumerate()
            .map(|(i, span)| {
                let from = tokens[span.start].start;
                let to = tokens[span.end - 1].end;
                Chunk {
                    chunk_id: format!("{}#{:04}", doc.doc_id, i),
                    doc_id: doc.doc_id.clone(),
                    text: doc.body[from..to].to_owned(),
                    token_span: span,
                    domain_tags: doc.domain_tags.clone(),
                    embedding: None,
                }
            })
            .collect())
    }

    /// Chunks every document in ingestion order.
    pub fn chunk_all(&self, params: ChunkParams) -> Result<Vec<Chunk>, CorpusError> {
        let mut out = Vec::new();
        for doc_id in self.docs.keys() {
            out.extend(self.chunk_document(doc_id, params)?);
        }
        Ok(out)
    }

    /// Ingests JSONL from a reader; bad lines become diagnostics.
    pub fn ingest_jsonl<R: BufRead>(&mut self, reader: R) -> Result<LoadReport, CorpusError> {
        let mut report = LoadReport::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<Document>(&line)
                .map_err(|e| e.to_string())
                .and_then(|doc| self.ingest_document(doc).map_err(|e| e.to_string()));
            match outcome {
                Ok(_) => report.ingested += 1,
                Err(message) => report.diagnostics.push(Diagnostic { line: n + 1, message }),
            }
        }
        Ok(report)
    }

    pub fn load_corpus_file(&mut self, path: impl AsRef<Path>) -> Result<LoadReport, CorpusError> {
        let path = path.as_ref();
        let report = self.ingest_jsonl(BufReader::new(File::open(path)?))?;
        for d in &report.diagnostics {
            log::warn!("{}:{}: {}", path.display(), d.line, d.message);
        }
        if report.ingested == 0 && !report.diagnostics.is_empty() {
            return Err(CorpusError::FormatError {
                path: path.display().to_string(),
                rejected: report.rejected(),
            });
        }
        Ok(report)
    }

    fn append_log(&self, record: &LogRecord) -> Result<(), CorpusError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }
}
