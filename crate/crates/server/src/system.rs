//! Wiring of one corpus directory into a running system: corpus, index,
//! chat backends, agents, sessions.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use biosage_core::agents::RetrievalAgent;
use biosage_core::corpus::{ChunkParams, Corpus, CorpusError, Diagnostic, Document, DomainTag, TagVocabulary};
use biosage_core::gateway::{BackendProfile, Embedder, EmbedderSpec, Gateway, GatewayError, Health};
use biosage_core::index::{
    build_index, embed_chunks, HybridIndex, IndexConfig, IndexError, IndexManifest, SharedIndex, DEFAULT_EMBEDDING_DIM,
};
use biosage_core::orchestrator::{Denylist, Orchestrator, OrchestratorConfig};
use biosage_core::session::{SessionError, SessionStore};
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

pub const INDEX_DIR: &str = "index";
pub const DEFAULT_HISTORY_WINDOW: usize = 10;
pub const DEFAULT_EMBED_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn default_embedder() -> EmbedderSpec {
    EmbedderSpec::Hash { dim: DEFAULT_EMBEDDING_DIM, seed: DEFAULT_EMBED_SEED }
}

/// Reads a JSON array of backend profiles; without a file the only
/// backend is an empty scripted mock named `mock`.
pub fn load_profiles(path: Option<&Path>) -> Result<Vec<BackendProfile>, ServerError> {
    match path {
        Some(p) => {
            let profiles = BackendProfile::load_all(p)?;
            if profiles.is_empty() {
                return Err(ServerError::Config(format!("{}: no backends", p.display())));
            }
            Ok(profiles)
        }
        None => Ok(vec![BackendProfile::new("mock", "mock")]),
    }
}

/// Finds `wanted` among the profiles. A name that looks like an endpoint
/// (`mock`, `mock:<script>`, `http(s)://...`) becomes an ad-hoc profile.
pub fn pick_profile(profiles: &[BackendProfile], wanted: Option<&str>) -> Result<BackendProfile, ServerError> {
    let Some(name) = wanted else {
        return profiles.first().cloned().ok_or_else(|| ServerError::Config("no backends configured".into()));
    };
    if let Some(p) = profiles.iter().find(|p| p.name == name) {
        return Ok(p.clone());
    }
    if name == "mock" || name.starts_with("mock:") || name.starts_with("http://") || name.starts_with("https://") {
        return Ok(BackendProfile::new(name, name));
    }
    let known: Vec<&str> = profiles.iter().map(|p| p.name.as_str()).collect();
    Err(ServerError::Config(format!("unknown backend {name:?} (configured: {})", known.join(", "))))
}

/// Loads `<corpus>/index` when present, otherwise indexes the corpus in
/// memory with the default embedder.
pub fn open_index(corpus: &Corpus, dir: &Path) -> Result<(HybridIndex, IndexManifest), ServerError> {
    if dir.join("manifest.json").is_file() {
        return Ok(HybridIndex::load(dir)?);
    }
    let embedder = default_embedder().build();
    Ok(build_index(corpus, Some(embedder.as_ref()), ChunkParams::default(), IndexConfig::default())?)
}

/// A vocabulary tag by exact name or unique prefix, so `computer-science`
/// finds `computer-science-and-engineering`.
pub fn resolve_tag(vocab: &TagVocabulary, name: &str) -> Result<DomainTag, ServerError> {
    let wanted = DomainTag::new(name);
    if vocab.contains(&wanted) {
        return Ok(wanted);
    }
    let hits: Vec<&DomainTag> = vocab.tags().iter().filter(|t| t.as_str().starts_with(wanted.as_str())).collect();
    match hits[..] {
        [one] => Ok(one.clone()),
        [] => Err(ServerError::Config(format!("unknown tag {name:?}"))),
        _ => Err(ServerError::Config(format!("ambiguous tag {name:?}"))),
    }
}

/// Comma-separated tag list, each resolved with [`resolve_tag`].
pub fn resolve_tags(vocab: &TagVocabulary, list: &str) -> Result<Vec<DomainTag>, ServerError> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|t| resolve_tag(vocab, t)).collect()
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub corpus_dir: PathBuf,
    /// Root of `sessions/`; the corpus directory when unset.
    pub data_dir: Option<PathBuf>,
    pub backends: Vec<BackendProfile>,
    pub backend: Option<String>,
    pub history_window: usize,
    pub denylist: Option<PathBuf>,
}

impl SystemConfig {
    pub fn new(corpus_dir: impl Into<PathBuf>) -> Self {
        SystemConfig {
            corpus_dir: corpus_dir.into(),
            data_dir: None,
            backends: vec![BackendProfile::new("mock", "mock")],
            backend: None,
            history_window: DEFAULT_HISTORY_WINDOW,
            denylist: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub ingested: usize,
    pub rejected: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendHealth {
    pub name: String,
    pub health: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthReport {
    pub status: &'static str,
    pub corpus_chunks: usize,
    pub backends: Vec<BackendHealth>,
}

pub struct System {
    corpus: Mutex<Corpus>,
    index: SharedIndex,
    index_dir: PathBuf,
    manifest: IndexManifest,
    embedder: Option<Arc<dyn Embedder>>,
    gateways: Vec<Arc<Gateway>>,
    orchestrator: Arc<Orchestrator>,
}

impl System {
    /// Builds every configured backend; the selected one drives the agents.
    pub fn open(config: &SystemConfig) -> Result<Self, ServerError> {
        let active = pick_profile(&config.backends, config.backend.as_deref())?;
        let mut gateways = vec![Arc::new(Gateway::from_profile(&active)?)];
        for p in config.backends.iter().filter(|p| p.name != active.name) {
            gateways.push(Arc::new(Gateway::from_profile(p)?));
        }
        Self::with_gateways(config, gateways)
    }

    /// `gateways[0]` drives the agents; the rest only appear in health reports.
    pub fn with_gateways(config: &SystemConfig, gateways: Vec<Arc<Gateway>>) -> Result<Self, ServerError> {
        let Some(active) = gateways.first().cloned() else {
            return Err(ServerError::Config("no backends configured".into()));
        };
        let corpus = Corpus::open(&config.corpus_dir)?;
        let index_dir = config.corpus_dir.join(INDEX_DIR);
        let (index, manifest) = open_index(&corpus, &index_dir)?;
        let embedder = manifest.embedder.as_ref().map(EmbedderSpec::build);
        let index = SharedIndex::new(index);

        let mut agent = RetrievalAgent::new(active, index.snapshot(), corpus.vocabulary().clone());
        if let Some(e) = &embedder {
            agent = agent.with_embedder(e.clone());
        }
        let store = SessionStore::open(config.data_dir.as_deref().unwrap_or(&config.corpus_dir))?;
        let denylist = match &config.denylist {
            Some(p) => Denylist::load(p)?,
            None => Denylist::default(),
        };
        let orch_config = OrchestratorConfig { history_window: config.history_window, ..OrchestratorConfig::default() };
        let orchestrator = Orchestrator::new(Arc::new(agent), Arc::new(store))
            .with_denylist(denylist)
            .with_config(orch_config);
        Ok(System {
            corpus: Mutex::new(corpus),
            index,
            index_dir,
            manifest,
            embedder,
            gateways,
            orchestrator: Arc::new(orchestrator),
        })
    }

    pub fn orchestrator(&self) -> &Arc<Orchestrator> {
        &self.orchestrator
    }

    pub fn store(&self) -> &Arc<SessionStore> {
        self.orchestrator.store()
    }

    pub fn retrieval(&self) -> Arc<RetrievalAgent> {
        self.orchestrator.retrieval()
    }

    pub fn index(&self) -> Arc<HybridIndex> {
        self.index.snapshot()
    }

    pub fn document(&self, doc_id: &str) -> Option<Document> {
        self.corpus.lock().get(doc_id).cloned()
    }

    fn chunk_params(&self) -> ChunkParams {
        ChunkParams { window_tokens: self.manifest.window_tokens, overlap_tokens: self.manifest.overlap_tokens }
    }

    /// Ingests corpus JSONL, indexes the new documents, persists the index
    /// and hands the new snapshot to the agents. Bad lines are reported,
    /// not fatal.
    pub fn ingest_jsonl(&self, body: &str) -> Result<IngestReport, ServerError> {
        let mut corpus = self.corpus.lock();
        let mut report = IngestReport::default();
        let mut chunks = Vec::new();
        for (n, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<Document>(line)
                .map_err(|e| e.to_string())
                .and_then(|doc| corpus.ingest_document(doc).map_err(|e| e.to_string()))
                .and_then(|id| corpus.chunk_document(&id, self.chunk_params()).map_err(|e| e.to_string()));
            match outcome {
                Ok(mut c) => {
                    report.ingested += 1;
                    chunks.append(&mut c);
                }
                Err(message) => report.diagnostics.push(Diagnostic { line: n + 1, message }),
            }
        }
        report.rejected = report.diagnostics.len();
        if !chunks.is_empty() {
            if let Some(e) = &self.embedder {
                embed_chunks(&mut chunks, e.as_ref())?;
            }
            self.index.upsert_chunks(chunks)?;
            let snapshot = self.index.snapshot();
            snapshot.save(&self.index_dir, &self.manifest)?;
            self.orchestrator.swap_index(snapshot);
        }
        Ok(report)
    }

    /// Liveness: the service is "ok" whenever it answers; unreachable
    /// backends are listed as degraded.
    pub fn health(&self) -> HealthReport {
        HealthReport {
            status: "ok",
            corpus_chunks: self.index.snapshot().len(),
            backends: self
                .gateways
                .iter()
                .map(|g| BackendHealth { name: g.backend_name().to_owned(), health: g.health() })
                .collect(),
        }
    }
}

/// Writes `value` as pretty JSON.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ServerError> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_selection() {
        let profiles = vec![BackendProfile::new("a", "http://a"), BackendProfile::new("b", "http://b")];
        assert_eq!(pick_profile(&profiles, None).unwrap().name, "a");
        assert_eq!(pick_profile(&profiles, Some("b")).unwrap().endpoint, "http://b");
        assert_eq!(pick_profile(&profiles, Some("mock")).unwrap().endpoint, "mock");
        assert!(matches!(pick_profile(&profiles, Some("c")), Err(ServerError::Config(_))));
    }

    #[test]
    fn tag_prefixes() {
        let v = TagVocabulary::default();
        assert_eq!(resolve_tag(&v, "computer-science").unwrap().as_str(), "computer-science-and-engineering");
        assert_eq!(resolve_tag(&v, "Biology").unwrap().as_str(), "biology");
        assert!(resolve_tag(&v, "astro").is_err());
        let v = TagVocabulary::new(["bio-a", "bio-b"]);
        assert!(matches!(resolve_tag(&v, "bio"), Err(ServerError::Config(m)) if m.contains("ambiguous")));
        assert_eq!(resolve_tags(&TagVocabulary::default(), "biology, medicine").unwrap().len(), 2);
    }

    #[test]
    fn ingest_counts_and_reindexes() {
        let dir = tempfile::tempdir().unwrap();
        let sys = System::open(&SystemConfig::new(dir.path())).unwrap();
        assert_eq!(sys.health().corpus_chunks, 0);
        let body = concat!(
            r#"{"doc_id": "d1", "title": "T", "body": "Kinases phosphorylate proteins.", "domain_tags": ["biology"]}"#,
            "\n",
            r#"{"doc_id": "d2", "title": "T", "body": "x", "domain_tags": ["astrology"]}"#,
            "\n\nnot json\n"
        );
        let r = sys.ingest_jsonl(body).unwrap();
        assert_eq!((r.ingested, r.rejected), (1, 2));
        assert_eq!(r.diagnostics.iter().map(|d| d.line).collect::<Vec<_>>(), [2, 4]);
        assert_eq!(sys.health().corpus_chunks, 1);
        assert_eq!(sys.retrieval().index().len(), 1);
        drop(sys);
        // the saved index is picked up on restart
        let again = System::open(&SystemConfig::new(dir.path())).unwrap();
        assert_eq!(again.health().corpus_chunks, 1);
        assert_eq!(again.document("d1").unwrap().title, "T");
    }
}
